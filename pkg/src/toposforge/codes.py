"""Codes for small families: the raw data behind universe classification.

A ``SmallCode`` at an object c is a presheaf on the slice at c valued in
initial segments of size < N, stored as raw tables so that strictness
properties ("bitwise equal codes") are plain equality of dataclasses.
Restriction of a code along v: c' -> c is re-indexing by postcomposition
with v, which is strictly functorial: ``code.restrict(id) == code`` and
``code.restrict(v∘u) == code.restrict(v).restrict(u)`` hold as raw data.

A ``ClassifyingSquare`` packages a map into the generic family without
materializing it: a natural code assignment on the base plus, for each base
element, a bijection between the family fiber and the code's element set.
Validity of the square is exactly cartesianness of the induced square into
the generic family.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

from .errors import BoundOverflowError, ValidationError, guard_size
from .fincat import FiniteCategory
from .presheaf import Presheaf, PresheafMap, fiber_elements, make_map, make_presheaf, yoneda


@lru_cache(maxsize=None)
def slice_data(cat: FiniteCategory, c: int):
    """Slice bookkeeping at c: objects are morphisms into c in index order.

    Returns (into, obj_pos, smors, smor_index) where ``smors`` lists the
    slice morphisms as triples (u_pos, w, target_pos) meaning the triangle
    (u∘w) -> (u) over w, and ``smor_index`` maps (u_pos, w) to positions.
    """
    into = cat.hom_into(c)
    pos = {u: i for i, u in enumerate(into)}
    smors = []
    index = {}
    for i, u in enumerate(into):
        for w in range(cat.n_morphisms()):
            if cat.dst[w] == cat.src[u]:
                index[(i, w)] = len(smors)
                smors.append((i, w, pos[cat.comp[u][w]]))
    return into, pos, tuple(smors), index


@dataclass(frozen=True)
class SmallCode:
    cat: FiniteCategory
    base: int
    sizes: tuple[int, ...]
    tables: tuple[tuple[int, ...], ...]

    def into_pos(self, u: int) -> int:
        return slice_data(self.cat, self.base)[1][u]

    def size_at(self, u: int) -> int:
        return self.sizes[self.into_pos(u)]

    def table(self, u_pos: int, w: int) -> tuple[int, ...]:
        return self.tables[slice_data(self.cat, self.base)[3][(u_pos, w)]]

    def el_size(self) -> int:
        return self.size_at(self.cat.identity[self.base])

    def el_restrict(self, u: int) -> tuple[int, ...]:
        """Element restriction along u into the base: el(code) -> el(code·u)."""
        id_pos = self.into_pos(self.cat.identity[self.base])
        return self.table(id_pos, u)

    def restrict(self, v: int) -> "SmallCode":
        """The code at src(v) obtained by re-indexing along postcomposition."""
        cat = self.cat
        if cat.dst[v] != self.base:
            raise ValidationError("code restriction along a morphism with wrong target")
        cp = cat.src[v]
        into_p, _, smors_p, _ = slice_data(cat, cp)
        _, pos, _, index = slice_data(cat, self.base)
        sizes = tuple(self.sizes[pos[cat.comp[v][u]]] for u in into_p)
        tables = tuple(
            self.tables[index[(pos[cat.comp[v][into_p[i]]], w)]]
            for (i, w, _t) in smors_p
        )
        return SmallCode(cat, cp, sizes, tables)

    def validate(self, bound: int | None = None) -> None:
        cat = self.cat
        into, _, smors, index = slice_data(cat, self.base)
        if len(self.sizes) != len(into) or len(self.tables) != len(smors):
            raise ValidationError("code tables have wrong shape")
        for k, (i, w, t) in enumerate(smors):
            tab = self.tables[k]
            if len(tab) != self.sizes[i]:
                raise ValidationError("code table has wrong length")
            if any(not 0 <= x < self.sizes[t] for x in tab):
                raise ValidationError("code table out of range")
            if cat.is_identity(w) and tab != tuple(range(self.sizes[i])):
                raise ValidationError("identity slice morphism acts non-trivially")
        for i, u in enumerate(into):
            for w in range(cat.n_morphisms()):
                if cat.dst[w] != cat.src[u]:
                    continue
                mid = index[(i, w)]
                t_pos = smors[mid][2]
                for wp in range(cat.n_morphisms()):
                    if cat.dst[wp] != cat.src[w]:
                        continue
                    lhs = self.tables[index[(i, cat.comp[w][wp])]]
                    snd = self.tables[index[(t_pos, wp)]]
                    fst = self.tables[mid]
                    for x in range(self.sizes[i]):
                        if lhs[x] != snd[fst[x]]:
                            raise ValidationError(
                                "slice functoriality fails",
                                witness=(cat.morphisms[u], cat.morphisms[w], cat.morphisms[wp]),
                            )
        if bound is not None:
            for s in self.sizes:
                if s >= bound:
                    raise BoundOverflowError("code carrier", s, bound)


def empty_code(cat: FiniteCategory, c: int) -> SmallCode:
    into, _, smors, _ = slice_data(cat, c)
    return SmallCode(cat, c, (0,) * len(into), ((),) * len(smors))


def singleton_code(cat: FiniteCategory, c: int) -> SmallCode:
    into, _, smors, _ = slice_data(cat, c)
    return SmallCode(cat, c, (1,) * len(into), ((0,),) * len(smors))


def enumerate_codes(cat: FiniteCategory, c: int, bound: int, cap=None) -> tuple[SmallCode, ...]:
    """All codes at c with carriers of size < bound, in a fixed order.

    Size tuples are enumerated lexicographically; for each, table choices
    are filled in DFS order over the slice morphisms with functoriality
    checked incrementally. The order is deterministic and is the carrier
    order of the materialized universe object.
    """
    into, _, smors, index = slice_data(cat, c)
    out: list[SmallCode] = []
    constraints = []  # (lhs_k, fst_k, snd_k) with lhs = snd∘fst
    for i, u in enumerate(into):
        for w in range(cat.n_morphisms()):
            if cat.dst[w] != cat.src[u]:
                continue
            mid = index[(i, w)]
            t_pos = smors[mid][2]
            for wp in range(cat.n_morphisms()):
                if cat.dst[wp] != cat.src[w]:
                    continue
                constraints.append((index[(i, cat.comp[w][wp])], mid, index[(t_pos, wp)]))
    for sizes in itertools.product(range(bound), repeat=len(into)):
        tables: list[tuple[int, ...] | None] = [None] * len(smors)

        def ok_so_far():
            for lhs_k, fst_k, snd_k in constraints:
                lhs, fst, snd = tables[lhs_k], tables[fst_k], tables[snd_k]
                if lhs is None or fst is None or snd is None:
                    continue
                for x in range(len(lhs)):
                    if lhs[x] != snd[fst[x]]:
                        return False
            return True

        def dfs(k):
            if k == len(smors):
                out.append(SmallCode(cat, c, sizes, tuple(tables)))
                guard_size("enumerate_codes", len(out), cap)
                return
            i, w, t = smors[k]
            if cat.is_identity(w):
                tables[k] = tuple(range(sizes[i]))
                if ok_so_far():
                    dfs(k + 1)
                tables[k] = None
                return
            for tab in itertools.product(range(sizes[t]), repeat=sizes[i]):
                tables[k] = tab
                if ok_so_far():
                    dfs(k + 1)
                tables[k] = None

        dfs(0)
    return tuple(out)


# --- Code maps and classifying squares ---


@dataclass(frozen=True)
class CodeMap:
    """A natural assignment of codes to the elements of a base presheaf."""

    base: Presheaf
    codes: tuple[tuple[SmallCode, ...], ...]

    def at(self, c: int, y: int) -> SmallCode:
        return self.codes[c][y]

    def validate(self, bound: int | None = None) -> None:
        cat = self.base.cat
        for c in range(cat.n_objects()):
            if len(self.codes[c]) != self.base.carriers[c]:
                raise ValidationError("code map has wrong shape")
            for y in range(self.base.carriers[c]):
                code = self.codes[c][y]
                if code.base != c:
                    raise ValidationError("code map assigns a code at the wrong object")
                code.validate(bound)
        for u in range(cat.n_morphisms()):
            c, cp = cat.dst[u], cat.src[u]
            for y in range(self.base.carriers[c]):
                if self.codes[c][y].restrict(u) != self.codes[cp][self.base.act(y, u)]:
                    raise ValidationError(
                        "code map is not natural",
                        witness=(cat.morphisms[u], y),
                    )


def code_map_over(base: Presheaf, assign) -> CodeMap:
    cm = CodeMap(
        base,
        tuple(
            tuple(assign(c, y) for y in range(base.carriers[c]))
            for c in range(base.cat.n_objects())
        ),
    )
    return cm


def code_map_from_code(code: SmallCode) -> tuple[Presheaf, CodeMap]:
    """The code map over the representable at the code's base (Yoneda)."""
    cat = code.cat
    y = yoneda(cat, code.base)
    homs = [cat.hom(d, code.base) for d in range(cat.n_objects())]
    return y, code_map_over(y, lambda d, i: code.restrict(homs[d][i]))


@dataclass(frozen=True)
class ClassifyingSquare:
    """A cartesian square from a family into the generic family, virtually.

    ``align[c][y][k]`` is the code-element index assigned to the k-th fiber
    element (fiber order = domain carrier order). Validity of this data is
    equivalent to the materialized square being a pullback.
    """

    family: PresheafMap
    codes: CodeMap
    align: tuple[tuple[tuple[int, ...], ...], ...]

    def code_at(self, c: int, y: int) -> SmallCode:
        return self.codes.at(c, y)

    def validate(self, bound: int | None = None) -> None:
        if self.codes.base != self.family.cod:
            raise ValidationError("classifying square over the wrong base")
        self.codes.validate(bound)
        cat = self.family.dom.cat
        X = self.family.dom
        for c in range(cat.n_objects()):
            for y in range(self.family.cod.carriers[c]):
                fib = fiber_elements(self.family, c, y)
                code = self.codes.at(c, y)
                al = self.align[c][y]
                if len(al) != len(fib) or sorted(al) != list(range(code.el_size())):
                    raise ValidationError(
                        "alignment is not a bijection onto the code elements",
                        witness=(cat.objects[c], y),
                    )
        for u in range(cat.n_morphisms()):
            c, cp = cat.dst[u], cat.src[u]
            for y in range(self.family.cod.carriers[c]):
                fib = fiber_elements(self.family, c, y)
                yu = self.family.cod.act(y, u)
                fib_u = fiber_elements(self.family, cp, yu)
                pos_u = {x: k for k, x in enumerate(fib_u)}
                el_rest = self.codes.at(c, y).el_restrict(u)
                for k, x in enumerate(fib):
                    if self.align[cp][yu][pos_u[X.act(x, u)]] != el_rest[self.align[c][y][k]]:
                        raise ValidationError(
                            "alignment does not commute with restriction",
                            witness=(cat.morphisms[u], y, x),
                        )

    def restricts_strictly_to(self, other: "ClassifyingSquare", mono: PresheafMap) -> bool:
        """Bitwise boundary check: this square ∘ mono equals ``other``."""
        cat = mono.dom.cat
        for c in range(cat.n_objects()):
            for a in range(mono.dom.carriers[c]):
                b = mono.comp[c][a]
                if self.codes.at(c, b) != other.codes.at(c, a):
                    return False
                if self.align[c][b] != other.align[c][a]:
                    return False
        return True


def classify_family(family: PresheafMap, bound: int | None = None) -> ClassifyingSquare:
    """The canonical classification of a family with small fibers.

    The code at (c, y) sends a slice object u to the fiber over y·u in
    carrier order; alignments are the identity indexings. Restriction
    tables are the fiber maps in those coordinates.
    """
    cat = family.dom.cat
    X, Y = family.dom, family.cod
    fibers = [
        [fiber_elements(family, c, y) for y in range(Y.carriers[c])]
        for c in range(cat.n_objects())
    ]

    def code_for(c, y):
        into, _, smors, _ = slice_data(cat, c)
        sizes = []
        for u in into:
            fib = fibers[cat.src[u]][Y.act(y, u)]
            if bound is not None and len(fib) >= bound:
                raise BoundOverflowError("family fiber", len(fib), bound)
            sizes.append(len(fib))
        tables = []
        for (i, w, _t) in smors:
            u = into[i]
            y_u = Y.act(y, u)
            y_uw = Y.act(y_u, w)
            fib_u = fibers[cat.src[u]][y_u]
            fib_uw = fibers[cat.src[w]][y_uw]
            pos = {x: k for k, x in enumerate(fib_uw)}
            tables.append(tuple(pos[X.act(x, w)] for x in fib_u))
        return SmallCode(cat, c, tuple(sizes), tuple(tables))

    codes = code_map_over(Y, code_for)
    align = tuple(
        tuple(
            tuple(range(len(fibers[c][y]))) for y in range(Y.carriers[c])
        )
        for c in range(cat.n_objects())
    )
    return ClassifyingSquare(family, codes, align)


def code_family(codes: CodeMap) -> PresheafMap:
    """The explicit pullback of the generic family along a code map.

    Total carrier at c: pairs (y, e) with e an element index of the code at
    y, in lexicographic order; restrictions use the codes' element tables.
    """
    Y = codes.base
    cat = Y.cat
    elems = [
        [(y, e) for y in range(Y.carriers[c]) for e in range(codes.at(c, y).el_size())]
        for c in range(cat.n_objects())
    ]
    index = [{p: i for i, p in enumerate(row)} for row in elems]

    def rest_for(u, i):
        c, cp = cat.dst[u], cat.src[u]
        y, e = elems[c][i]
        return index[cp][(Y.act(y, u), codes.at(c, y).el_restrict(u)[e])]

    total = make_presheaf(cat, (len(row) for row in elems), rest_for)
    return make_map(total, Y, lambda c, i: elems[c][i][0])


def square_pullback_iso(square: ClassifyingSquare) -> PresheafMap:
    """The canonical isomorphism from the family domain to the code family.

    Witnesses classification soundness: pulling the generic family back
    along the square's codes gives the family, via the alignments.
    """
    fam = code_family(square.codes)
    X, Y = square.family.dom, square.family.cod
    cat = X.cat
    index = [
        {
            (y, e): i
            for i, (y, e) in enumerate(
                (y, e)
                for y in range(Y.carriers[c])
                for e in range(square.codes.at(c, y).el_size())
            )
        }
        for c in range(cat.n_objects())
    ]
    fiber_pos = [
        {
            y: {x: k for k, x in enumerate(fiber_elements(square.family, c, y))}
            for y in range(Y.carriers[c])
        }
        for c in range(cat.n_objects())
    ]

    def component(c, x):
        y = square.family.comp[c][x]
        k = fiber_pos[c][y][x]
        return index[c][(y, square.align[c][y][k])]

    iso = make_map(X, fam.dom, component)
    if not iso.is_iso():
        raise ValidationError("classification did not produce an isomorphism witness")
    return iso


# --- Restriction of families along monos, and realignment problems ---


def restrict_family(family: PresheafMap, mono: PresheafMap):
    """Pull a family back along a mono into its base.

    Returns (restricted family over dom(mono), top map into the family
    domain). Carriers of the restricted total space are pairs (a, q) in
    lexicographic order.
    """
    if mono.cod != family.cod:
        raise ValidationError("mono and family have different bases")
    if not mono.is_mono():
        raise ValidationError("restriction along a non-mono")
    A = mono.dom
    cat = A.cat
    elems = [
        [
            (a, q)
            for a in range(A.carriers[c])
            for q in fiber_elements(family, c, mono.comp[c][a])
        ]
        for c in range(cat.n_objects())
    ]
    index = [{p: i for i, p in enumerate(row)} for row in elems]

    def rest_for(u, i):
        c, cp = cat.dst[u], cat.src[u]
        a, q = elems[c][i]
        return index[cp][(A.act(a, u), family.dom.act(q, u))]

    total = make_presheaf(cat, (len(row) for row in elems), rest_for)
    proj = make_map(total, A, lambda c, i: elems[c][i][0])
    top = make_map(total, family.dom, lambda c, i: elems[c][i][1])
    return proj, top


@dataclass(frozen=True)
class RealignmentProblem:
    """A mono m: A -> B, a small family over B, and a partial classifier.

    The partial classifier is a classifying square for the canonical
    restriction of the family along the mono (see ``restrict_family``).
    """

    mono: PresheafMap
    family: PresheafMap
    partial: ClassifyingSquare

    def validate(self, bound: int | None = None) -> None:
        if not self.mono.is_mono():
            raise ValidationError("realignment problem mono is not injective")
        if self.mono.cod != self.family.cod:
            raise ValidationError("mono and family bases differ")
        expected, _ = restrict_family(self.family, self.mono)
        if self.partial.family != expected:
            raise ValidationError(
                "partial classifier is not over the canonical restricted family"
            )
        self.partial.validate(bound)


def realign(problem: RealignmentProblem, bound: int | None = None) -> ClassifyingSquare:
    """Solve a realignment problem: a classifier of the family over the whole
    base restricting bitwise to the partial classifier along the mono.

    Construction: solve the set-level problem at every base element (reuse
    the given alignment on the image of the mono, fall back to the carrier
    order off it), then assemble the codes by reading each slice value as
    the aligned fiber over the restricted element.
    """
    problem.validate(bound)
    m, f = problem.mono, problem.family
    cat = f.dom.cat
    X, B, A = f.dom, f.cod, m.dom
    preimage = [
        {m.comp[c][a]: a for a in range(A.carriers[c])} for c in range(cat.n_objects())
    ]
    fibers = [
        [fiber_elements(f, c, b) for b in range(B.carriers[c])]
        for c in range(cat.n_objects())
    ]

    def alignment_at(c, b):
        fib = fibers[c][b]
        if bound is not None and len(fib) >= bound:
            raise BoundOverflowError("family fiber", len(fib), bound)
        if b in preimage[c]:
            return problem.partial.align[c][preimage[c][b]]
        return tuple(range(len(fib)))

    aligns = [
        [alignment_at(c, b) for b in range(B.carriers[c])]
        for c in range(cat.n_objects())
    ]

    def code_for(c, b):
        into, _, smors, _ = slice_data(cat, c)
        sizes = tuple(len(fibers[cat.src[u]][B.act(b, u)]) for u in into)
        tables = []
        for (i, w, _t) in smors:
            u = into[i]
            b_u = B.act(b, u)
            b_uw = B.act(b_u, w)
            cu, cuw = cat.src[u], cat.src[w]
            al_u, al_uw = aligns[cu][b_u], aligns[cuw][b_uw]
            fib_u, fib_uw = fibers[cu][b_u], fibers[cuw][b_uw]
            pos_uw = {x: k for k, x in enumerate(fib_uw)}
            table = [0] * len(fib_u)
            for k, x in enumerate(fib_u):
                table[al_u[k]] = al_uw[pos_uw[X.act(x, w)]]
            tables.append(tuple(table))
        return SmallCode(cat, c, sizes, tuple(tables))

    codes = code_map_over(B, code_for)
    align = tuple(tuple(row) for row in aligns)
    solution = ClassifyingSquare(f, codes, align)
    solution.validate(bound)
    if not solution.restricts_strictly_to(problem.partial, m):
        raise ValidationError("realignment failed to restrict strictly (internal error)")
    return solution


def permuted_square(square: ClassifyingSquare, sigma: PresheafMap) -> ClassifyingSquare:
    """Conjugate a classifying square by an automorphism of the family.

    ``sigma`` must be a natural automorphism of the family over its base.
    The result is a valid classifying square of the same family whose codes
    and alignments differ from the canonical ones whenever sigma does.
    """
    fam = square.family
    X, Y = fam.dom, fam.cod
    cat = X.cat
    fibers = [
        [fiber_elements(fam, c, y) for y in range(Y.carriers[c])]
        for c in range(cat.n_objects())
    ]
    pos = [
        [{x: k for k, x in enumerate(row)} for row in fibers[c]]
        for c in range(cat.n_objects())
    ]

    def hatted(c, y):
        """The permutation of code elements induced by sigma at (c, y)."""
        al = square.align[c][y]
        out = [0] * len(al)
        for k, x in enumerate(fibers[c][y]):
            out[al[k]] = al[pos[c][y][sigma.comp[c][x]]]
        return out

    def code_for(c, y):
        old = square.codes.at(c, y)
        into, _, smors, _ = slice_data(cat, c)
        hats = {}
        for i, u in enumerate(into):
            hats[i] = hatted(cat.src[u], Y.act(y, u))
        inv = {
            i: {v: k for k, v in enumerate(h)} for i, h in hats.items()
        }
        tables = []
        for k, (i, w, t) in enumerate(smors):
            old_tab = old.tables[k]
            tab = tuple(hats[t][old_tab[inv[i][e]]] for e in range(len(old_tab)))
            tables.append(tab)
        return SmallCode(cat, c, old.sizes, tuple(tables))

    codes = code_map_over(Y, code_for)
    align = tuple(
        tuple(
            tuple(
                square.align[c][y][pos[c][y][sigma.comp[c][x]]]
                for x in fibers[c][y]
            )
            for y in range(Y.carriers[c])
        )
        for c in range(cat.n_objects())
    )
    out = ClassifyingSquare(fam, codes, align)
    out.validate()
    return out
