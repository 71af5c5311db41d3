"""Finite presheaves on a finite category: the elementary-topos toolbox.

Carriers are canonical initial segments ``{0..n-1}``; every construction
that invents elements (limits, quotients, matching families, sections)
enumerates them in a deterministic lexicographic order so that downstream
strict-equality tests are meaningful.

Conventions. For a morphism ``u: c' -> c`` the restriction ``X(u)`` maps
``X(c) -> X(c')``; we write ``x·u`` for ``X(u)(x)``, so ``(x·u)·w = x·(u∘w)``.
Epi/mono/iso are decided componentwise (valid in presheaf topoi).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

from .errors import ValidationError, guard_size
from .fincat import FiniteCategory, make_category


@dataclass(frozen=True)
class Presheaf:
    cat: FiniteCategory
    carriers: tuple[int, ...]
    rest: tuple[tuple[int, ...], ...]

    def act(self, x: int, u: int) -> int:
        """Restrict ``x ∈ X(dst u)`` along ``u``, giving an element of X(src u)."""
        return self.rest[u][x]

    def elements(self):
        for c in range(len(self.carriers)):
            for x in range(self.carriers[c]):
                yield c, x

    def total_size(self) -> int:
        return sum(self.carriers)

    def validate(self) -> None:
        cat = self.cat
        if len(self.carriers) != cat.n_objects() or len(self.rest) != cat.n_morphisms():
            raise ValidationError("presheaf tables have wrong shape")
        for u in range(cat.n_morphisms()):
            if len(self.rest[u]) != self.carriers[cat.dst[u]]:
                raise ValidationError(f"restriction table for {cat.morphisms[u]} has wrong length")
            for x in self.rest[u]:
                if not 0 <= x < self.carriers[cat.src[u]]:
                    raise ValidationError(f"restriction along {cat.morphisms[u]} out of range")
        for c in range(cat.n_objects()):
            i = cat.identity[c]
            if self.rest[i] != tuple(range(self.carriers[c])):
                raise ValidationError(f"identity restriction at {cat.objects[c]} is not identity")
        for g in range(cat.n_morphisms()):
            for f in range(cat.n_morphisms()):
                if cat.dst[g] != cat.src[f]:
                    continue
                fg = cat.comp[f][g]
                for x in range(self.carriers[cat.dst[f]]):
                    if self.rest[fg][x] != self.rest[g][self.rest[f][x]]:
                        raise ValidationError(
                            "contravariant functoriality fails on "
                            f"({cat.morphisms[f]}, {cat.morphisms[g]})",
                            witness=(cat.morphisms[f], cat.morphisms[g], x),
                        )


def make_presheaf(cat: FiniteCategory, carriers, rest_for) -> Presheaf:
    """Assemble a presheaf from a carrier-size list and a restriction callback.

    ``rest_for(u, x)`` returns the restriction of element ``x`` of the
    carrier at ``dst(u)`` along morphism ``u``.
    """
    carriers = tuple(carriers)
    rest = tuple(
        tuple(rest_for(u, x) for x in range(carriers[cat.dst[u]]))
        for u in range(cat.n_morphisms())
    )
    ps = Presheaf(cat, carriers, rest)
    ps.validate()
    return ps


def empty_presheaf(cat: FiniteCategory) -> Presheaf:
    return Presheaf(cat, (0,) * cat.n_objects(), ((),) * cat.n_morphisms())


def terminal_presheaf(cat: FiniteCategory) -> Presheaf:
    return Presheaf(cat, (1,) * cat.n_objects(), ((0,),) * cat.n_morphisms())


@dataclass(frozen=True)
class PresheafMap:
    dom: Presheaf
    cod: Presheaf
    comp: tuple[tuple[int, ...], ...]

    def at(self, c: int, x: int) -> int:
        return self.comp[c][x]

    def validate(self) -> None:
        if self.dom.cat != self.cod.cat:
            raise ValidationError("map between presheaves on different categories")
        cat = self.dom.cat
        for c in range(cat.n_objects()):
            if len(self.comp[c]) != self.dom.carriers[c]:
                raise ValidationError(f"component at {cat.objects[c]} has wrong length")
            for y in self.comp[c]:
                if not 0 <= y < self.cod.carriers[c]:
                    raise ValidationError(f"component at {cat.objects[c]} out of range")
        for u in range(cat.n_morphisms()):
            c, cp = cat.dst[u], cat.src[u]
            for x in range(self.dom.carriers[c]):
                if self.comp[cp][self.dom.act(x, u)] != self.cod.act(self.comp[c][x], u):
                    raise ValidationError(
                        f"naturality fails at {cat.morphisms[u]}",
                        witness=(cat.morphisms[u], x),
                    )

    def is_mono(self) -> bool:
        return all(len(set(row)) == len(row) for row in self.comp)

    def is_epi(self) -> bool:
        return all(
            set(row) == set(range(self.cod.carriers[c])) for c, row in enumerate(self.comp)
        )

    def is_iso(self) -> bool:
        return self.is_mono() and self.is_epi()

    def inverse(self) -> "PresheafMap":
        if not self.is_iso():
            raise ValidationError("cannot invert a non-isomorphism")
        comp = []
        for c, row in enumerate(self.comp):
            inv = [0] * len(row)
            for x, y in enumerate(row):
                inv[y] = x
            comp.append(tuple(inv))
        return PresheafMap(self.cod, self.dom, tuple(comp))


def identity_map(X: Presheaf) -> PresheafMap:
    return PresheafMap(X, X, tuple(tuple(range(n)) for n in X.carriers))


def compose_maps(g: PresheafMap, f: PresheafMap) -> PresheafMap:
    """g∘f (apply f first)."""
    if f.cod != g.dom:
        raise ValidationError("maps not composable")
    return PresheafMap(
        f.dom,
        g.cod,
        tuple(tuple(g.comp[c][y] for y in row) for c, row in enumerate(f.comp)),
    )


def make_map(dom: Presheaf, cod: Presheaf, component) -> PresheafMap:
    m = PresheafMap(
        dom,
        cod,
        tuple(
            tuple(component(c, x) for x in range(dom.carriers[c]))
            for c in range(dom.cat.n_objects())
        ),
    )
    m.validate()
    return m


def unique_map_to_terminal(X: Presheaf, one: Presheaf | None = None) -> PresheafMap:
    one = one if one is not None else terminal_presheaf(X.cat)
    return PresheafMap(X, one, tuple((0,) * n for n in X.carriers))


def unique_map_from_empty(X: Presheaf, zero: Presheaf | None = None) -> PresheafMap:
    zero = zero if zero is not None else empty_presheaf(X.cat)
    return PresheafMap(zero, X, ((),) * X.cat.n_objects())


def fiber_elements(f: PresheafMap, c: int, y: int) -> tuple[int, ...]:
    """Elements of the fiber of f over (c, y), in carrier order of the domain."""
    return tuple(x for x in range(f.dom.carriers[c]) if f.comp[c][x] == y)


def max_fiber_size(f: PresheafMap) -> int:
    worst = 0
    for c in range(f.cod.cat.n_objects()):
        counts = [0] * f.cod.carriers[c]
        for y in f.comp[c]:
            counts[y] += 1
        if counts:
            worst = max(worst, max(counts))
    return worst


# --- Yoneda and categories of elements ---


def yoneda(cat: FiniteCategory, c: int) -> Presheaf:
    """The representable presheaf y(c)(d) = Hom(d, c), restriction by precomposition."""
    if not 0 <= c < cat.n_objects():
        raise ValidationError(f"unknown object index {c}")
    homs = tuple(cat.hom(d, c) for d in range(cat.n_objects()))
    pos = [{m: i for i, m in enumerate(h)} for h in homs]

    def rest_for(u, x):
        f = homs[cat.dst[u]][x]
        return pos[cat.src[u]][cat.comp[f][u]]

    return make_presheaf(cat, (len(h) for h in homs), rest_for)


def yoneda_element_map(cat: FiniteCategory, c: int, X: Presheaf, x: int) -> PresheafMap:
    """The map y(c) -> X picking out the element x ∈ X(c) (Yoneda)."""
    y = yoneda(cat, c)
    homs = [cat.hom(d, c) for d in range(cat.n_objects())]
    return make_map(y, X, lambda d, i: X.act(x, homs[d][i]))


def elements_category(X: Presheaf):
    """The category of elements of X with its labelling.

    Objects are pairs (c, x) in lexicographic order named ``<obj>:<x>``;
    a morphism u: c' -> c of the base and x ∈ X(c) give a morphism
    (c', x·u) -> (c, x). Returns (category, object labels as (c, x) pairs).
    """
    cat = X.cat
    labels = [(c, x) for c in range(cat.n_objects()) for x in range(X.carriers[c])]
    name = {lab: f"{cat.objects[lab[0]]}:{lab[1]}" for lab in labels}
    decl = []
    for c in range(cat.n_objects()):
        for x in range(X.carriers[c]):
            for u in range(cat.n_morphisms()):
                if cat.dst[u] != c or cat.is_identity(u):
                    continue
                s = (cat.src[u], X.act(x, u))
                decl.append((f"{cat.morphisms[u]}@{name[(c, x)]}", name[s], name[(c, x)]))
    compose = []
    for c in range(cat.n_objects()):
        for x in range(X.carriers[c]):
            for u in range(cat.n_morphisms()):
                if cat.dst[u] != c or cat.is_identity(u):
                    continue
                xu = X.act(x, u)
                for w in range(cat.n_morphisms()):
                    if cat.dst[w] != cat.src[u] or cat.is_identity(w):
                        continue
                    uw = cat.comp[u][w]
                    tgt = name[(c, x)]
                    lhs = f"{cat.morphisms[u]}@{tgt}"
                    rhs = f"{cat.morphisms[w]}@{name[(cat.src[u], xu)]}"
                    if cat.is_identity(uw):
                        comp_name = f"id_{tgt}"
                    else:
                        comp_name = f"{cat.morphisms[uw]}@{tgt}"
                    compose.append([lhs, rhs, comp_name])
    elcat = make_category([name[lab] for lab in labels], decl, compose)
    return elcat, tuple(labels)


# --- Finite limits and colimits, computed pointwise ---


@dataclass(frozen=True)
class Diagram:
    nodes: tuple[Presheaf, ...]
    edges: tuple[tuple[int, int, PresheafMap], ...]

    def validate(self) -> None:
        for s, d, m in self.edges:
            if m.dom != self.nodes[s] or m.cod != self.nodes[d]:
                raise ValidationError("ill-typed diagram edge")


@dataclass(frozen=True)
class LimitResult:
    apex: Presheaf
    projections: tuple[PresheafMap, ...]
    index: tuple[dict, ...]

    def mediate(self, cone: tuple[PresheafMap, ...]) -> PresheafMap:
        Z = cone[0].dom
        return make_map(
            Z,
            self.apex,
            lambda c, z: self.index[c][tuple(leg.comp[c][z] for leg in cone)],
        )


def finite_limit(cat: FiniteCategory, diagram: Diagram, cap=None) -> LimitResult:
    """Pointwise limit of a finite diagram with its projection maps."""
    diagram.validate()
    nodes, edges = diagram.nodes, diagram.edges
    if not nodes:
        one = terminal_presheaf(cat)
        return LimitResult(one, (), tuple({(): 0} for _ in range(cat.n_objects())))
    size = 1
    for c in range(cat.n_objects()):
        prod = 1
        for X in nodes:
            prod *= X.carriers[c]
        size += prod
    guard_size("finite_limit carrier enumeration", size, cap)
    carriers_elems = []
    for c in range(cat.n_objects()):
        elems = [
            tup
            for tup in itertools.product(*(range(X.carriers[c]) for X in nodes))
            if all(m.comp[c][tup[s]] == tup[d] for s, d, m in edges)
        ]
        carriers_elems.append(elems)
    index = tuple({tup: i for i, tup in enumerate(elems)} for elems in carriers_elems)

    def rest_for(u, i):
        tup = carriers_elems[cat.dst[u]][i]
        return index[cat.src[u]][tuple(X.act(x, u) for X, x in zip(nodes, tup))]

    apex = make_presheaf(cat, (len(e) for e in carriers_elems), rest_for)
    projections = tuple(
        make_map(apex, X, lambda c, i, k=k: carriers_elems[c][i][k])
        for k, X in enumerate(nodes)
    )
    return LimitResult(apex, projections, index)


def product(X: Presheaf, Y: Presheaf) -> tuple[Presheaf, PresheafMap, PresheafMap]:
    res = finite_limit(X.cat, Diagram((X, Y), ()))
    return res.apex, res.projections[0], res.projections[1]


def pullback(f: PresheafMap, g: PresheafMap):
    """Pullback of the cospan f: X -> Z <- Y :g; returns (P, to_dom(f), to_dom(g))."""
    if f.cod != g.cod:
        raise ValidationError("pullback of maps with different codomains")
    res = finite_limit(f.dom.cat, Diagram((f.dom, g.dom, f.cod), ((0, 2, f), (1, 2, g))))
    return res.apex, res.projections[0], res.projections[1]


def equalizer(f: PresheafMap, g: PresheafMap):
    if f.dom != g.dom or f.cod != g.cod:
        raise ValidationError("equalizer of non-parallel maps")
    X = f.dom
    elems = [
        [x for x in range(X.carriers[c]) if f.comp[c][x] == g.comp[c][x]]
        for c in range(X.cat.n_objects())
    ]
    index = [{x: i for i, x in enumerate(row)} for row in elems]
    E = make_presheaf(
        X.cat,
        (len(row) for row in elems),
        lambda u, i: index[X.cat.src[u]][X.act(elems[X.cat.dst[u]][i], u)],
    )
    incl = make_map(E, X, lambda c, i: elems[c][i])
    return E, incl


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, i):
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i, j):
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[max(ri, rj)] = min(ri, rj)


@dataclass(frozen=True)
class ColimitResult:
    apex: Presheaf
    injections: tuple[PresheafMap, ...]
    class_of: tuple[tuple[dict, ...], ...]

    def comediate(self, cocone: tuple[PresheafMap, ...]) -> PresheafMap:
        Z = cocone[0].cod
        comp = []
        for c in range(self.apex.cat.n_objects()):
            row = [None] * self.apex.carriers[c]
            for k, leg in enumerate(cocone):
                for x in range(leg.dom.carriers[c]):
                    cls = self.injections[k].comp[c][x]
                    val = leg.comp[c][x]
                    if row[cls] is not None and row[cls] != val:
                        raise ValidationError("cocone does not factor through colimit")
                    row[cls] = val
            comp.append(tuple(row))
        out = PresheafMap(self.apex, Z, tuple(comp))
        out.validate()
        return out


def finite_colimit(cat: FiniteCategory, diagram: Diagram, cap=None) -> ColimitResult:
    """Pointwise colimit: tagged disjoint union quotiented by the edge relation.

    Equivalence classes are ordered by their least member in the tagged
    enumeration (node-major); this fixes the apex carriers canonically.
    """
    diagram.validate()
    nodes, edges = diagram.nodes, diagram.edges
    total = sum(sum(X.carriers) for X in nodes) + 1
    guard_size("finite_colimit carrier enumeration", total, cap)
    offsets, classes, reps = [], [], []
    for c in range(cat.n_objects()):
        offs = []
        run = 0
        for X in nodes:
            offs.append(run)
            run += X.carriers[c]
        uf = _UnionFind(run)
        for s, d, m in edges:
            for x in range(nodes[s].carriers[c]):
                uf.union(offs[s] + x, offs[d] + m.comp[c][x])
        rep_list = sorted({uf.find(i) for i in range(run)})
        rep_index = {r: i for i, r in enumerate(rep_list)}
        classes.append([rep_index[uf.find(i)] for i in range(run)])
        reps.append(rep_list)
        offsets.append(offs)

    def untag(c, tagged):
        for k in range(len(nodes) - 1, -1, -1):
            if tagged >= offsets[c][k]:
                return k, tagged - offsets[c][k]
        raise AssertionError

    def rest_for(u, i):
        c, cp = cat.dst[u], cat.src[u]
        k, x = untag(c, reps[c][i])
        return classes[cp][offsets[cp][k] + nodes[k].act(x, u)]

    apex = make_presheaf(cat, (len(r) for r in reps), rest_for)
    injections = tuple(
        make_map(X, apex, lambda c, x, k=k: classes[c][offsets[c][k] + x])
        for k, X in enumerate(nodes)
    )
    class_of = tuple(
        tuple(
            {x: classes[c][offsets[c][k] + x] for x in range(nodes[k].carriers[c])}
            for c in range(cat.n_objects())
        )
        for k in range(len(nodes))
    )
    return ColimitResult(apex, injections, class_of)


def coproduct(X: Presheaf, Y: Presheaf):
    res = finite_colimit(X.cat, Diagram((X, Y), ()))
    return res.apex, res.injections[0], res.injections[1]


def pushout(f: PresheafMap, g: PresheafMap):
    """Pushout of the span f: A -> B, g: A -> C; returns (P, from B, from C)."""
    if f.dom != g.dom:
        raise ValidationError("pushout of maps with different domains")
    res = finite_colimit(f.dom.cat, Diagram((f.dom, f.cod, g.cod), ((0, 1, f), (0, 2, g))))
    return res.apex, res.injections[1], res.injections[2]


def coequalizer(f: PresheafMap, g: PresheafMap):
    if f.dom != g.dom or f.cod != g.cod:
        raise ValidationError("coequalizer of non-parallel maps")
    res = finite_colimit(
        f.dom.cat, Diagram((f.dom, f.cod), ((0, 1, f), (0, 1, g)))
    )
    # the coequalizer quotient is the injection from the codomain node
    return res.apex, res.injections[1]


# --- Commuting squares and the pullback test ---


@dataclass(frozen=True)
class Square:
    """Oriented commuting square: bottom∘left == right∘top (NW->SE both ways)."""

    top: PresheafMap
    bottom: PresheafMap
    left: PresheafMap
    right: PresheafMap

    def commutes(self) -> bool:
        lhs = compose_maps(self.bottom, self.left)
        rhs = compose_maps(self.right, self.top)
        return lhs.comp == rhs.comp

    def validate(self) -> None:
        if self.top.dom != self.left.dom or self.top.cod != self.right.dom:
            raise ValidationError("square corners do not match")
        if self.left.cod != self.bottom.dom or self.right.cod != self.bottom.cod:
            raise ValidationError("square corners do not match")
        if not self.commutes():
            raise ValidationError("square does not commute")


def is_cartesian_square(sq: Square, cap=None):
    """Decide whether a commuting square is a pullback.

    Returns ``(True, comparison)`` with the comparison isomorphism into the
    computed pullback, or ``(False, witness)`` where the witness names an
    object at which the canonical comparison fails to be a bijection.
    """
    sq.validate()
    P, p_left, p_top = pullback(sq.bottom, sq.right)
    cmp_map = make_map(
        sq.top.dom,
        P,
        lambda c, x: _pair_index(P, p_left, p_top, c, sq.left.comp[c][x], sq.top.comp[c][x]),
    )
    cat = P.cat
    for c in range(cat.n_objects()):
        row = cmp_map.comp[c]
        if len(set(row)) != len(row):
            dup = _first_duplicate(row)
            return False, {
                "object": cat.objects[c],
                "reason": "comparison not injective",
                "elements": dup,
            }
        if len(row) != P.carriers[c]:
            missing = sorted(set(range(P.carriers[c])) - set(row))[0]
            return False, {
                "object": cat.objects[c],
                "reason": "comparison not surjective",
                "missing_pullback_element": missing,
            }
    return True, cmp_map


@lru_cache(maxsize=None)
def _pair_lookup(P: Presheaf, p_left: PresheafMap, p_top: PresheafMap):
    return tuple(
        {
            (p_left.comp[c][i], p_top.comp[c][i]): i
            for i in range(P.carriers[c])
        }
        for c in range(P.cat.n_objects())
    )


def _pair_index(P, p_left, p_top, c, a, b):
    table = _pair_lookup(P, p_left, p_top)
    try:
        return table[c][(a, b)]
    except KeyError:
        raise ValidationError("square does not commute into the pullback") from None


def _first_duplicate(row):
    seen = {}
    for i, v in enumerate(row):
        if v in seen:
            return (seen[v], i)
        seen[v] = i
    return None


# --- Sieves and the subobject classifier ---


@lru_cache(maxsize=None)
def sieves_on(cat: FiniteCategory, c: int) -> tuple[frozenset, ...]:
    """All sieves on c, ordered by ascending member-bitmask over hom_into(c)."""
    into = cat.hom_into(c)
    sieves = []
    for mask in range(1 << len(into)):
        members = frozenset(into[i] for i in range(len(into)) if mask >> i & 1)
        closed = all(
            cat.comp[u][w] in members
            for u in members
            for w in range(cat.n_morphisms())
            if cat.dst[w] == cat.src[u]
        )
        if closed:
            sieves.append(members)
    return tuple(sieves)


@lru_cache(maxsize=None)
def sieve_index(cat: FiniteCategory, c: int) -> dict:
    return {s: i for i, s in enumerate(sieves_on(cat, c))}


def pull_sieve(cat: FiniteCategory, sieve: frozenset, u: int) -> frozenset:
    """u*S = {w with cod src(u) | u∘w ∈ S}, a sieve on src(u)."""
    cp = cat.src[u]
    return frozenset(
        w for w in range(cat.n_morphisms()) if cat.dst[w] == cp and cat.comp[u][w] in sieve
    )


def maximal_sieve(cat: FiniteCategory, c: int) -> frozenset:
    return frozenset(cat.hom_into(c))


def subobject_classifier(cat: FiniteCategory) -> tuple[Presheaf, PresheafMap]:
    """The presheaf of sieves with its truth map from the terminal presheaf."""
    def rest_for(u, i):
        s = sieves_on(cat, cat.dst[u])[i]
        return sieve_index(cat, cat.src[u])[pull_sieve(cat, s, u)]

    omega = make_presheaf(cat, (len(sieves_on(cat, c)) for c in range(cat.n_objects())), rest_for)
    truth = make_map(
        terminal_presheaf(cat),
        omega,
        lambda c, _x: sieve_index(cat, c)[maximal_sieve(cat, c)],
    )
    return omega, truth


def characteristic_map(m: PresheafMap, omega: Presheaf | None = None) -> PresheafMap:
    """char(m): X -> Ω for a mono m: A -> X."""
    if not m.is_mono():
        raise ValidationError("characteristic map of a non-mono")
    X = m.cod
    cat = X.cat
    if omega is None:
        omega, _ = subobject_classifier(cat)
    images = [set(m.comp[c]) for c in range(cat.n_objects())]

    def component(c, x):
        s = frozenset(
            u for u in cat.hom_into(c) if X.act(x, u) in images[cat.src[u]]
        )
        return sieve_index(cat, c)[s]

    return make_map(X, omega, component)


# --- Partial map classifier ---


def matching_families(X: Presheaf, cat: FiniteCategory, sieve: frozenset):
    """All compatible families over a sieve, lexicographic in member order.

    A family assigns to each u ∈ S (ascending index order) an element
    x_u ∈ X(src u) with x_u·w = x_{u∘w} for every composable w.
    """
    members = sorted(sieve)
    pos = {u: i for i, u in enumerate(members)}
    out = []

    def compatible(i, acc, x):
        u = members[i]
        for w in range(cat.n_morphisms()):
            if cat.dst[w] != cat.src[u]:
                continue
            j = pos[cat.comp[u][w]]
            if j < i and acc[j] != X.act(x, w):
                return False
            if j == i and X.act(x, w) != x:
                return False
        for ip in range(i):
            up = members[ip]
            for w in range(cat.n_morphisms()):
                if cat.dst[w] != cat.src[up]:
                    continue
                if cat.comp[up][w] == u and X.act(acc[ip], w) != x:
                    return False
        return True

    def backtrack(i, acc):
        if i == len(members):
            out.append(tuple(acc))
            return
        u = members[i]
        for x in range(X.carriers[cat.src[u]]):
            if compatible(i, acc, x):
                backtrack(i + 1, acc + [x])

    backtrack(0, [])
    return members, out


def partial_map_classifier(X: Presheaf) -> tuple[Presheaf, PresheafMap]:
    """X⁺ (pairs of a sieve and a compatible family over it) with its unit."""
    cat = X.cat
    elems, index = [], []
    for c in range(cat.n_objects()):
        at_c = []
        for s_idx, sieve in enumerate(sieves_on(cat, c)):
            members, fams = matching_families(X, cat, sieve)
            for fam in fams:
                at_c.append((s_idx, tuple(zip(members, fam))))
        elems.append(at_c)
        index.append({e: i for i, e in enumerate(at_c)})

    def rest_for(u, i):
        c, cp = cat.dst[u], cat.src[u]
        s_idx, fam = elems[c][i]
        fam_map = dict(fam)
        sieve_p = pull_sieve(cat, sieves_on(cat, c)[s_idx], u)
        members_p = sorted(sieve_p)
        fam_p = tuple((w, fam_map[cat.comp[u][w]]) for w in members_p)
        return index[cp][(sieve_index(cat, cp)[sieve_p], fam_p)]

    plus = make_presheaf(cat, (len(e) for e in elems), rest_for)

    def unit_component(c, x):
        members = sorted(maximal_sieve(cat, c))
        fam = tuple((u, X.act(x, u)) for u in members)
        return index[c][(sieve_index(cat, c)[maximal_sieve(cat, c)], fam)]

    unit = make_map(X, plus, unit_component)
    return plus, unit


# --- Dependent products ---


def dependent_product(f: PresheafMap, g: PresheafMap, cap=None) -> PresheafMap:
    """The pushforward f_*g: for f: A -> I and g: B -> A, a family over I.

    The fiber over (c, i) consists of natural sections: assignments, to each
    pair (u: c' -> c, a ∈ A(c') with f(a) = i·u), of an element of the
    g-fiber over a, natural in u. Sections are enumerated lexicographically
    over the (u, a) pairs in (morphism, carrier) order.
    """
    proj, _ = dependent_product_layout(f, g, cap)
    return proj


def dependent_product_layout(f: PresheafMap, g: PresheafMap, cap=None):
    """As :func:`dependent_product`, also returning the per-object element
    triples (base element, section domain, section values)."""
    if f.dom != g.cod:
        raise ValidationError("dependent product of non-composable data")
    A, I, B = f.dom, f.cod, g.dom
    cat = A.cat
    elems, index = [], []
    for c in range(cat.n_objects()):
        at_c = []
        for i in range(I.carriers[c]):
            domain = [
                (u, a)
                for u in cat.hom_into(c)
                for a in range(A.carriers[cat.src[u]])
                if f.comp[cat.src[u]][a] == I.act(i, u)
            ]
            pos = {p: k for k, p in enumerate(domain)}
            sections = []

            def compatible(k, acc, b):
                u, a = domain[k]
                cp = cat.src[u]
                for w in range(cat.n_morphisms()):
                    if cat.dst[w] != cp:
                        continue
                    j = pos[(cat.comp[u][w], A.act(a, w))]
                    if j < k and acc[j] != B.act(b, w):
                        return False
                    if j == k and B.act(b, w) != b:
                        return False
                for kp in range(k):
                    up, ap = domain[kp]
                    for w in range(cat.n_morphisms()):
                        if cat.dst[w] != cat.src[up]:
                            continue
                        if (cat.comp[up][w], A.act(ap, w)) == (u, a) and (
                            B.act(acc[kp], w) != b
                        ):
                            return False
                return True

            def backtrack(k, acc):
                if k == len(domain):
                    sections.append(tuple(acc))
                    return
                _u, a = domain[k]
                for b in fiber_elements(g, cat.src[domain[k][0]], a):
                    if compatible(k, acc, b):
                        backtrack(k + 1, acc + [b])

            backtrack(0, [])
            guard_size(
                "dependent_product sections",
                len(at_c) + len(sections),
                cap,
            )
            for s in sections:
                at_c.append((i, tuple(domain), s))
        elems.append(at_c)
        index.append(
            {(i, dom_, s): k for k, (i, dom_, s) in enumerate(at_c)}
        )

    def rest_for(u, k):
        c, cp = cat.dst[u], cat.src[u]
        i, domain, s = elems[c][k]
        ip = I.act(i, u)
        sec = dict(zip(domain, s))
        domain_p = tuple(
            (w, a)
            for w in cat.hom_into(cp)
            for a in range(A.carriers[cat.src[w]])
            if f.comp[cat.src[w]][a] == I.act(ip, w)
        )
        s_p = tuple(sec[(cat.comp[u][w], a)] for (w, a) in domain_p)
        return index[cp][(ip, domain_p, s_p)]

    P = make_presheaf(cat, (len(e) for e in elems), rest_for)
    proj = make_map(P, I, lambda c, k: elems[c][k][0])
    return proj, elems


# --- Image factorization ---


def image_factorization(alpha: PresheafMap) -> tuple[PresheafMap, PresheafMap]:
    """Factor alpha = mono ∘ epi through its pointwise image."""
    Y = alpha.cod
    cat = Y.cat
    images = [sorted(set(alpha.comp[c])) for c in range(cat.n_objects())]
    pos = [{y: i for i, y in enumerate(row)} for row in images]
    im = make_presheaf(
        cat,
        (len(row) for row in images),
        lambda u, i: pos[cat.src[u]][Y.act(images[cat.dst[u]][i], u)],
    )
    epi = make_map(alpha.dom, im, lambda c, x: pos[c][alpha.comp[c][x]])
    mono = make_map(im, Y, lambda c, i: images[c][i])
    return epi, mono


# --- Subobjects and congruences ---


def restriction_closure(X: Presheaf, seed) -> tuple[frozenset, ...]:
    """Close per-object element subsets under all restrictions."""
    cat = X.cat
    sub = [set(s) for s in seed]
    changed = True
    while changed:
        changed = False
        for u in range(cat.n_morphisms()):
            c, cp = cat.dst[u], cat.src[u]
            for x in list(sub[c]):
                xu = X.act(x, u)
                if xu not in sub[cp]:
                    sub[cp].add(xu)
                    changed = True
    return tuple(frozenset(s) for s in sub)


def sub_presheaf(X: Presheaf, subsets) -> PresheafMap:
    """Canonical mono from the restriction-closed family ``subsets`` into X."""
    cat = X.cat
    elems = [sorted(subsets[c]) for c in range(cat.n_objects())]
    pos = [{x: i for i, x in enumerate(row)} for row in elems]
    A = make_presheaf(
        cat,
        (len(row) for row in elems),
        lambda u, i: pos[cat.src[u]][X.act(elems[cat.dst[u]][i], u)],
    )
    return make_map(A, X, lambda c, i: elems[c][i])


def enumerate_subobjects(X: Presheaf, cap=None) -> list[PresheafMap]:
    """All restriction-closed sub-families of X as canonical monos.

    Enumeration order: ascending per-object bitmasks, object-major.
    """
    cat = X.cat
    total = 1
    for n in X.carriers:
        total *= 1 << n
    guard_size("enumerate_subobjects", total, cap)
    out = []
    for masks in itertools.product(*(range(1 << n) for n in X.carriers)):
        subsets = [
            frozenset(x for x in range(X.carriers[c]) if masks[c] >> x & 1)
            for c in range(cat.n_objects())
        ]
        closed = all(
            X.act(x, u) in subsets[cat.src[u]]
            for u in range(cat.n_morphisms())
            for x in subsets[cat.dst[u]]
        )
        if closed:
            out.append(sub_presheaf(X, subsets))
    return out


@dataclass(frozen=True)
class Congruence:
    """A restriction-closed family of equivalence relations, one per object.

    ``labels[c][x]`` is the class label of x; labels are canonical
    (restricted-growth: first occurrence order).
    """

    labels: tuple[tuple[int, ...], ...]

    def validate(self, X: Presheaf) -> None:
        cat = X.cat
        for u in range(cat.n_morphisms()):
            c, cp = cat.dst[u], cat.src[u]
            for x in range(X.carriers[c]):
                for y in range(x + 1, X.carriers[c]):
                    if self.labels[c][x] == self.labels[c][y]:
                        if self.labels[cp][X.act(x, u)] != self.labels[cp][X.act(y, u)]:
                            raise ValidationError(
                                "congruence not closed under restriction",
                                witness=(cat.morphisms[u], x, y),
                            )


def _partitions(n: int):
    """Partitions of range(n) as restricted-growth label strings."""
    if n == 0:
        yield ()
        return

    def backtrack(i, acc, top):
        if i == n:
            yield tuple(acc)
            return
        for lab in range(top + 2):
            yield from backtrack(i + 1, acc + [lab], max(top, lab))

    yield from backtrack(1, [0], 0)


def enumerate_congruences(X: Presheaf, cap=None) -> list[Congruence]:
    parts = [list(_partitions(n)) for n in X.carriers]
    total = 1
    for p in parts:
        total *= len(p)
    guard_size("enumerate_congruences", total, cap)
    out = []
    for combo in itertools.product(*parts):
        cong = Congruence(tuple(combo))
        try:
            cong.validate(X)
        except ValidationError:
            continue
        out.append(cong)
    return out


def quotient(X: Presheaf, R: Congruence) -> tuple[Presheaf, PresheafMap]:
    """Quotient presheaf with classes ordered by least member, plus the epi."""
    R.validate(X)
    cat = X.cat
    classes = []
    for c in range(cat.n_objects()):
        n_classes = max(R.labels[c], default=-1) + 1
        classes.append(n_classes)
    Q = make_presheaf(
        cat,
        classes,
        lambda u, k: R.labels[X.cat.src[u]][
            X.act(R.labels[X.cat.dst[u]].index(k), u)
        ],
    )
    epi = make_map(X, Q, lambda c, x: R.labels[c][x])
    return Q, epi


# --- Hom-set enumeration (exhaustive, with pruning) ---


def all_maps(X: Presheaf, Y: Presheaf, limit: int | None = None):
    """Enumerate natural transformations X -> Y in lexicographic order.

    Components are assigned element by element; every naturality constraint
    is checked as soon as both of its endpoints are assigned, so dead
    branches are cut early.
    """
    cat = X.cat
    slots = [(c, x) for c in range(cat.n_objects()) for x in range(X.carriers[c])]
    slot_pos = {s: k for k, s in enumerate(slots)}
    # per slot: naturality constraints touching it, as (u, this_is_target)
    constraints: list[list] = [[] for _ in slots]
    for u in range(cat.n_morphisms()):
        c, cp = cat.dst[u], cat.src[u]
        for x in range(X.carriers[c]):
            k_src = slot_pos[(c, x)]
            k_dst = slot_pos[(cp, X.act(x, u))]
            later, earlier = max(k_src, k_dst), min(k_src, k_dst)
            constraints[later].append((u, x, k_src, k_dst))
    values: list[int | None] = [None] * len(slots)
    found = 0

    def ok(k):
        for u, x, k_src, k_dst in constraints[k]:
            v_src, v_dst = values[k_src], values[k_dst]
            if v_src is None or v_dst is None:
                continue
            if Y.act(v_src, u) != v_dst:
                return False
        return True

    def backtrack(k):
        nonlocal found
        if limit is not None and found >= limit:
            return
        if k == len(slots):
            comp = []
            pos = 0
            for c in range(cat.n_objects()):
                comp.append(tuple(values[pos : pos + X.carriers[c]]))
                pos += X.carriers[c]
            found += 1
            yield PresheafMap(X, Y, tuple(comp))
            return
        c, _x = slots[k]
        for v in range(Y.carriers[c]):
            values[k] = v
            if ok(k):
                yield from backtrack(k + 1)
            values[k] = None
            if limit is not None and found >= limit:
                return

    yield from backtrack(0)


def count_maps(X: Presheaf, Y: Presheaf) -> int:
    return sum(1 for _ in all_maps(X, Y))
