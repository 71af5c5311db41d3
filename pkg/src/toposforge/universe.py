"""Universes of bounded families: finite sets, presheaves, hierarchy.

The set-level universe is the projection from pointed bounded sets; its
realignment solver is the two-case formula (reuse the given classifier on
the image of the mono, canonical fiber count elsewhere) that the presheaf
solver in :mod:`toposforge.codes` applies componentwise.

A ``UniverseHandle`` keeps the base category and bound and exposes the code
calculus virtually; materialization of the full universe object is explicit
and cap-guarded because its carriers grow doubly exponentially.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .codes import (
    ClassifyingSquare,
    CodeMap,
    RealignmentProblem,
    SmallCode,
    classify_family,
    code_family,
    code_map_from_code,
    code_map_over,
    enumerate_codes,
    realign,
    restrict_family,
    permuted_square,
    slice_data,
    square_pullback_iso,
)
from .errors import BoundOverflowError, ValidationError, guard_size
from .fincat import FiniteCategory
from .presheaf import (
    Presheaf,
    PresheafMap,
    Square,
    compose_maps,
    dependent_product,
    empty_presheaf,
    fiber_elements,
    make_map,
    make_presheaf,
    max_fiber_size,
    pullback,
    subobject_classifier,
    unique_map_from_empty,
    yoneda,
)
from .sampling import (
    random_epi_onto,
    random_family,
    random_family_automorphism,
    random_map,
    random_presheaf,
    random_subobject,
)

AXIOMS = ("U1", "U2", "U3", "U4", "U5", "U6", "U7", "U8")


# --- The universe of bounded finite sets ---


@dataclass(frozen=True)
class SetUniverse:
    """Codes are sizes 0..N-1; the generic map projects pointed codes."""

    bound: int

    def vty(self) -> tuple[int, ...]:
        return tuple(range(self.bound))

    def vel(self) -> tuple[tuple[int, int], ...]:
        return tuple((k, i) for k in range(self.bound) for i in range(k))


@dataclass(frozen=True)
class SetRealignmentProblem:
    """m: A -> B injective, f: Q -> B with small fibers, partial classifier.

    ``partial_align[a]`` lists, for the fiber of f over m(a) in carrier
    order, the assigned point indices below ``partial_codes[a]``.
    """

    a_size: int
    b_size: int
    m: tuple[int, ...]
    f: tuple[int, ...]
    partial_codes: tuple[int, ...]
    partial_align: tuple[tuple[int, ...], ...]

    def fiber(self, b: int) -> tuple[int, ...]:
        return tuple(q for q, img in enumerate(self.f) if img == b)

    def validate(self, bound: int) -> None:
        if len(self.m) != self.a_size or len(set(self.m)) != self.a_size:
            raise ValidationError("set realignment: m is not an injection")
        if any(not 0 <= b < self.b_size for b in self.m):
            raise ValidationError("set realignment: m out of range")
        for a in range(self.a_size):
            fib = self.fiber(self.m[a])
            code = self.partial_codes[a]
            if not 0 <= code < bound:
                raise ValidationError("set realignment: partial code out of bound")
            al = self.partial_align[a]
            if len(al) != len(fib) or sorted(al) != list(range(code)):
                raise ValidationError(
                    "set realignment: alignment is not a bijection", witness=a
                )


@dataclass(frozen=True)
class SetClassifier:
    codes: tuple[int, ...]
    align: tuple[tuple[int, ...], ...]


def realign_set(universe: SetUniverse, problem: SetRealignmentProblem) -> SetClassifier:
    """Solve a set-level realignment problem strictly.

    On the image of m the given codes and point alignments are reused
    verbatim; elsewhere the code is the fiber size with the carrier-order
    alignment. Fibers of size >= bound are rejected.
    """
    problem.validate(universe.bound)
    preimage = {problem.m[a]: a for a in range(problem.a_size)}
    codes, align = [], []
    for b in range(problem.b_size):
        fib = problem.fiber(b)
        if len(fib) >= universe.bound:
            raise BoundOverflowError("set realignment fiber", len(fib), universe.bound)
        if b in preimage:
            a = preimage[b]
            codes.append(problem.partial_codes[a])
            align.append(problem.partial_align[a])
        else:
            codes.append(len(fib))
            align.append(tuple(range(len(fib))))
    return SetClassifier(tuple(codes), tuple(align))


# --- Hofmann-Streicher universe handles ---


class UniverseHandle:
    """Virtual access to the universe of families with fibers < bound.

    Membership, restriction, classification, and realignment act on raw
    code data; ``ty_presheaf``/``generic_map`` materialize the universe
    object itself (cap-guarded) for honest pullback checks.
    """

    def __init__(self, cat: FiniteCategory, bound: int, mode: str = "presheaf"):
        if bound < 1:
            raise ValidationError("universe bound must be >= 1")
        self.cat = cat
        self.bound = bound
        self.mode = mode
        self._codes: dict[int, tuple[SmallCode, ...]] = {}
        self._index: dict[int, dict[SmallCode, int]] = {}
        self._ty: Presheaf | None = None
        self._generic: PresheafMap | None = None

    def contains(self, code: SmallCode) -> bool:
        try:
            code.validate(self.bound)
        except (ValidationError, BoundOverflowError):
            return False
        return True

    def codes_at(self, c: int, cap=None) -> tuple[SmallCode, ...]:
        if c not in self._codes:
            self._codes[c] = enumerate_codes(self.cat, c, self.bound, cap)
            self._index[c] = {code: i for i, code in enumerate(self._codes[c])}
        return self._codes[c]

    def code_index(self, c: int, code: SmallCode, cap=None) -> int:
        self.codes_at(c, cap)
        return self._index[c][code]

    def ty_presheaf(self, cap=None) -> Presheaf:
        if self._ty is None:
            cat = self.cat
            sizes = [len(self.codes_at(c, cap)) for c in range(cat.n_objects())]
            guard_size("materialize universe object", sum(sizes), cap)
            self._ty = make_presheaf(
                cat,
                sizes,
                lambda u, i: self.code_index(
                    cat.src[u], self.codes_at(cat.dst[u])[i].restrict(u)
                ),
            )
        return self._ty

    def generic_map(self, cap=None) -> PresheafMap:
        if self._generic is None:
            cat = self.cat
            ty = self.ty_presheaf(cap)
            elems = [
                [
                    (i, e)
                    for i, code in enumerate(self.codes_at(c))
                    for e in range(code.el_size())
                ]
                for c in range(cat.n_objects())
            ]
            guard_size("materialize generic family", sum(len(r) for r in elems), cap)
            index = [{p: k for k, p in enumerate(row)} for row in elems]

            def rest_for(u, k):
                c, cp = cat.dst[u], cat.src[u]
                i, e = elems[c][k]
                code = self.codes_at(c)[i]
                return index[cp][
                    (self.code_index(cp, code.restrict(u)), code.el_restrict(u)[e])
                ]

            el = make_presheaf(cat, (len(r) for r in elems), rest_for)
            self._generic = make_map(el, ty, lambda c, k: elems[c][k][0])
        return self._generic

    def square_as_maps(self, square: ClassifyingSquare, cap=None) -> Square:
        """Materialize a classifying square against the universe object."""
        cat = self.cat
        generic = self.generic_map(cap)
        ty = self.ty_presheaf(cap)
        el_index = [
            {
                (i, e): k
                for k, (i, e) in enumerate(
                    (i, e)
                    for i, code in enumerate(self.codes_at(c))
                    for e in range(code.el_size())
                )
            }
            for c in range(cat.n_objects())
        ]
        bottom = make_map(
            square.family.cod,
            ty,
            lambda c, y: self.code_index(c, square.codes.at(c, y)),
        )
        fiber_pos = [
            {
                y: {x: k for k, x in enumerate(fiber_elements(square.family, c, y))}
                for y in range(square.family.cod.carriers[c])
            }
            for c in range(cat.n_objects())
        ]

        def top_component(c, x):
            y = square.family.comp[c][x]
            code_idx = self.code_index(c, square.codes.at(c, y))
            return el_index[c][(code_idx, square.align[c][y][fiber_pos[c][y][x]])]

        top = make_map(square.family.dom, generic.dom, top_component)
        return Square(top=top, bottom=bottom, left=square.family, right=generic)


def hs_universe(cat: FiniteCategory, bound: int) -> UniverseHandle:
    return UniverseHandle(cat, bound, mode="presheaf")


def materialize_TY(handle: UniverseHandle, c: int, cap=None) -> tuple[SmallCode, ...]:
    return handle.codes_at(c, cap)


def el_fiber(code: SmallCode) -> tuple[int, ...]:
    """The code's carrier at the identity slice object."""
    return tuple(range(code.el_size()))


def classify(handle: UniverseHandle, family: PresheafMap) -> ClassifyingSquare:
    square = classify_family(family, handle.bound)
    square.validate(handle.bound)
    return square


def realign_presheaf(handle: UniverseHandle, problem: RealignmentProblem) -> ClassifyingSquare:
    if handle.mode != "presheaf":
        raise ValidationError("realign_presheaf requires a presheaf-mode handle")
    return realign(problem, handle.bound)


# --- Sigma and Pi codes (slice-wise formation) ---


def context_extension(codes: CodeMap) -> PresheafMap:
    """The projection from the context extended by a family of codes."""
    return code_family(codes)


def _ext_layout(a: CodeMap):
    base = a.base
    layout, index = [], []
    for c in range(base.cat.n_objects()):
        row = [
            (y, e)
            for y in range(base.carriers[c])
            for e in range(a.at(c, y).el_size())
        ]
        layout.append(row)
        index.append({p: i for i, p in enumerate(row)})
    return layout, index


def code_sigma(a: CodeMap, b: CodeMap, bound: int) -> CodeMap:
    """Slice-wise dependent sum of codes: pairs over each slice object.

    Commutes strictly with restriction along maps of the context because
    the data at every slice object depends only on restricted inputs.
    """
    gamma = a.base
    cat = gamma.cat
    _, ext_index = _ext_layout(a)

    def pairs_at(cp: int, gamma_p: int):
        out = []
        for e in range(a.at(cp, gamma_p).el_size()):
            b_code = b.at(cp, ext_index[cp][(gamma_p, e)])
            for k in range(b_code.el_size()):
                out.append((e, k))
        return out

    def code_for(c, y):
        into, _, smors, _ = slice_data(cat, c)
        value_pairs = []
        for u in into:
            cp = cat.src[u]
            pr = pairs_at(cp, gamma.act(y, u))
            if len(pr) >= bound:
                raise BoundOverflowError("sigma code carrier", len(pr), bound)
            value_pairs.append(pr)
        pair_pos = [
            {p: i for i, p in enumerate(pr)} for pr in value_pairs
        ]
        tables = []
        for (i, w, t) in smors:
            u = into[i]
            cp = cat.src[u]
            yu = gamma.act(y, u)
            a_tab = a.at(c, y).table(i, w)
            tab = []
            for (e, k) in value_pairs[i]:
                b_code = b.at(cp, ext_index[cp][(yu, e)])
                tab.append(pair_pos[t][(a_tab[e], b_code.el_restrict(w)[k])])
            tables.append(tuple(tab))
        return SmallCode(cat, c, tuple(len(p) for p in value_pairs), tuple(tables))

    out = code_map_over(gamma, code_for)
    return out


def _pi_sections(a: CodeMap, b: CodeMap, ext_index, cp: int, gamma_p: int):
    """Natural sections of b over the elements of a at (cp, gamma_p).

    Domain pairs (w: d -> cp, e ∈ el(a at gamma_p·w)) in (morphism, element)
    order; values are element indices of the matching b code; naturality is
    enforced bidirectionally during backtracking.
    """
    cat = a.base.cat
    gamma = a.base
    domain = []
    for w in cat.hom_into(cp):
        g_w = gamma.act(gamma_p, w)
        for e in range(a.at(cat.src[w], g_w).el_size()):
            domain.append((w, e))
    pos = {p: i for i, p in enumerate(domain)}

    def b_code_at(w, e):
        d = cat.src[w]
        return b.at(d, ext_index[d][(gamma.act(gamma_p, w), e)])

    sections = []

    def compatible(k, acc, val):
        w, e = domain[k]
        d = cat.src[w]
        a_code_w = a.at(d, gamma.act(gamma_p, w))
        bc = b_code_at(w, e)
        for wp in range(cat.n_morphisms()):
            if cat.dst[wp] != d:
                continue
            target = (cat.comp[w][wp], a_code_w.el_restrict(wp)[e])
            j = pos[target]
            if j < k and acc[j] != bc.el_restrict(wp)[val]:
                return False
            if j == k and bc.el_restrict(wp)[val] != val:
                return False
        for kp in range(k):
            w0, e0 = domain[kp]
            d0 = cat.src[w0]
            a_code_0 = a.at(d0, gamma.act(gamma_p, w0))
            for wp in range(cat.n_morphisms()):
                if cat.dst[wp] != d0:
                    continue
                if (cat.comp[w0][wp], a_code_0.el_restrict(wp)[e0]) == (w, e):
                    if b_code_at(w0, e0).el_restrict(wp)[acc[kp]] != val:
                        return False
        return True

    def backtrack(k, acc):
        if k == len(domain):
            sections.append(tuple(acc))
            return
        w, e = domain[k]
        for val in range(b_code_at(w, e).el_size()):
            if compatible(k, acc, val):
                backtrack(k + 1, acc + [val])

    backtrack(0, [])
    return domain, sections


def code_pi(a: CodeMap, b: CodeMap, bound: int) -> CodeMap:
    """Slice-wise dependent product of codes: natural sections pointwise."""
    gamma = a.base
    cat = gamma.cat
    _, ext_index = _ext_layout(a)
    cache: dict[tuple[int, int], tuple] = {}

    def sections(cp, gp):
        if (cp, gp) not in cache:
            cache[(cp, gp)] = _pi_sections(a, b, ext_index, cp, gp)
        return cache[(cp, gp)]

    def code_for(c, y):
        into, _, smors, _ = slice_data(cat, c)
        per_u = []
        for u in into:
            dom, secs = sections(cat.src[u], gamma.act(y, u))
            if len(secs) >= bound:
                raise BoundOverflowError("pi code carrier", len(secs), bound)
            per_u.append((dom, secs, {s: i for i, s in enumerate(secs)}))
        tables = []
        for (i, w, t) in smors:
            dom_u, secs_u, _ = per_u[i]
            dom_t, _, index_t = per_u[t]
            sec_pos = {p: k for k, p in enumerate(dom_u)}
            tab = []
            for s in secs_u:
                restricted = tuple(
                    s[sec_pos[(cat.comp[w][wp], e)]] for (wp, e) in dom_t
                )
                tab.append(index_t[restricted])
            tables.append(tuple(tab))
        return SmallCode(
            cat, c, tuple(len(p[1]) for p in per_u), tuple(tables)
        )

    return code_map_over(gamma, code_for)


# --- Pi formation data over representables (for the hierarchy) ---


@dataclass(frozen=True)
class PiFormationDatum:
    """A dependent-product formation datum at an object: base code plus a
    natural family of codes over its extension of the representable."""

    target: int
    a: SmallCode
    b: CodeMap

    def level(self) -> int:
        worst = max(self.a.sizes, default=0)
        for row in self.b.codes:
            for code in row:
                worst = max(worst, max(code.sizes, default=0))
        return worst + 1

    def restrict(self, v: int) -> "PiFormationDatum":
        cat = self.a.cat
        cp = cat.src[v]
        a_p = self.a.restrict(v)
        y_p, a_map_p = code_map_from_code(a_p)
        ext_p = code_family(a_map_p)
        homs_p = [cat.hom(d, cp) for d in range(cat.n_objects())]
        _, old_index = _ext_layout(code_map_from_code(self.a)[1])
        layout_p, _ = _ext_layout(a_map_p)

        def transport(d, i):
            u_pos, e = layout_p[d][i]
            u = homs_p[d][u_pos]
            homs_c = cat.hom(d, self.target)
            vu = cat.comp[v][u]
            return self.b.at(d, old_index[d][(homs_c.index(vu), e)])

        return PiFormationDatum(cp, a_p, code_map_over(ext_p.dom, transport))


def formation_extension(a: SmallCode) -> tuple[Presheaf, CodeMap, PresheafMap]:
    """The representable at the code's base extended by the code."""
    y, a_map = code_map_from_code(a)
    ext = code_family(a_map)
    return y, a_map, ext


def pi_of_datum(datum: PiFormationDatum, bound: int) -> SmallCode:
    """The dependent-product code of a formation datum at its target object."""
    _, a_map, _ = formation_extension(datum.a)
    pi = code_pi(a_map, datum.b, bound)
    cat = datum.a.cat
    id_pos = cat.hom(datum.target, datum.target).index(cat.identity[datum.target])
    return pi.at(datum.target, id_pos)


def sigma_of_datum(datum: PiFormationDatum, bound: int) -> SmallCode:
    _, a_map, _ = formation_extension(datum.a)
    sig = code_sigma(a_map, datum.b, bound)
    cat = datum.a.cat
    id_pos = cat.hom(datum.target, datum.target).index(cat.identity[datum.target])
    return sig.at(datum.target, id_pos)


def enumerate_formation_data(
    handle: UniverseHandle, c: int, cap=None
) -> list[PiFormationDatum]:
    """Exhaustively enumerate formation data at an object for a handle.

    For each code a at c, natural assignments of codes to the extension of
    the representable are enumerated by backtracking with naturality
    pruning over the extension elements in carrier order.
    """
    cat = handle.cat
    out: list[PiFormationDatum] = []
    for a in handle.codes_at(c, cap):
        _y, a_map, ext = formation_extension(a)
        E = ext.dom
        slots = [(d, i) for d in range(cat.n_objects()) for i in range(E.carriers[d])]
        choice: dict[tuple[int, int], SmallCode] = {}

        def natural_so_far():
            for u in range(cat.n_morphisms()):
                d, dp = cat.dst[u], cat.src[u]
                for i in range(E.carriers[d]):
                    if (d, i) not in choice:
                        continue
                    j = E.act(i, u)
                    if (dp, j) not in choice:
                        continue
                    if choice[(d, i)].restrict(u) != choice[(dp, j)]:
                        return False
            return True

        def backtrack(k):
            if k == len(slots):
                b = code_map_over(E, lambda d, i: choice[(d, i)])
                out.append(PiFormationDatum(c, a, b))
                guard_size("enumerate_formation_data", len(out), cap)
                return
            d, i = slots[k]
            for code in handle.codes_at(d):
                choice[(d, i)] = code
                if natural_so_far():
                    backtrack(k + 1)
                del choice[(d, i)]

        backtrack(0)
    return out


# --- Hierarchy inclusion and strictified Pi formation ---


@dataclass(frozen=True)
class HierarchyInclusion:
    small: UniverseHandle
    large: UniverseHandle

    def include(self, code: SmallCode) -> SmallCode:
        """Codes with sizes < N are literally codes with sizes < M."""
        code.validate(self.small.bound)
        return code

    def materialized_square(self, cap=None) -> Square:
        """The inclusion of universe objects as an honest cartesian square."""
        small_ty = self.small.ty_presheaf(cap)
        large_ty = self.large.ty_presheaf(cap)
        small_el = self.small.generic_map(cap)
        large_el = self.large.generic_map(cap)
        cat = self.small.cat
        bottom = make_map(
            small_ty,
            large_ty,
            lambda c, i: self.large.code_index(c, self.small.codes_at(c)[i]),
        )
        large_elems = [
            {
                (i, e): k
                for k, (i, e) in enumerate(
                    (i, e)
                    for i, code in enumerate(self.large.codes_at(c))
                    for e in range(code.el_size())
                )
            }
            for c in range(cat.n_objects())
        ]
        small_elems = [
            [
                (i, e)
                for i, code in enumerate(self.small.codes_at(c))
                for e in range(code.el_size())
            ]
            for c in range(cat.n_objects())
        ]

        def top_component(c, k):
            i, e = small_elems[c][k]
            return large_elems[c][(bottom.comp[c][i], e)]

        top = make_map(small_el.dom, large_el.dom, top_component)
        return Square(top=top, bottom=bottom, left=small_el, right=large_el)


def hierarchy_include(small: UniverseHandle, large: UniverseHandle) -> HierarchyInclusion:
    if small.cat != large.cat:
        raise ValidationError("hierarchy inclusion requires the same base category")
    if large.bound <= small.bound:
        raise ValidationError("hierarchy inclusion requires a strictly larger bound")
    return HierarchyInclusion(small, large)


@dataclass(frozen=True)
class StrictPiFormer:
    """A dependent-product code former at the large level that agrees
    bitwise with the included small-level former on small-level data.

    This is the pointwise reading of realigning the large-level classifier
    of the universal product family along the mono of formation-data
    objects: on the image of the mono reuse the small level's classifier,
    elsewhere classify canonically at the large level.
    """

    inclusion: HierarchyInclusion

    def apply(self, datum: PiFormationDatum) -> tuple[SmallCode, str]:
        if datum.level() <= self.inclusion.small.bound:
            return (
                self.inclusion.include(pi_of_datum(datum, self.inclusion.small.bound)),
                "included",
            )
        return pi_of_datum(datum, self.inclusion.large.bound), "fresh"


def strictify_hierarchy_pi(inclusion: HierarchyInclusion) -> StrictPiFormer:
    return StrictPiFormer(inclusion)


# --- Axiom checking ---


@dataclass(frozen=True)
class AxiomConfig:
    instances: int = 50
    seed: int = 0
    max_card: int = 3
    exhaustive: bool = False


@dataclass
class AxiomReport:
    axiom: str
    outcomes: list
    required_bound: int | None = None

    @property
    def failures(self) -> list:
        return [o for o in self.outcomes if o["outcome"] == "fail"]

    @property
    def inconclusive(self) -> list:
        return [o for o in self.outcomes if o["outcome"] == "inconclusive"]

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_json(self) -> dict:
        return {
            "axiom": self.axiom,
            "instances": len(self.outcomes),
            "failures": len(self.failures),
            "inconclusive": len(self.inconclusive),
            "required_bound": self.required_bound,
            "outcomes": self.outcomes,
        }


def _record(outcomes, idx, outcome, **info):
    entry = {"instance": idx, "outcome": outcome}
    entry.update(info)
    outcomes.append(entry)


def check_axiom(handle: UniverseHandle, which: str, config: AxiomConfig | None = None) -> AxiomReport:
    config = config or AxiomConfig()
    rng = random.Random(config.seed)
    dispatch = {
        "U1": _check_u1,
        "U2": _check_u2,
        "U3": _check_u3,
        "U4": _check_u4,
        "U5": _check_u5,
        "U6": _check_u6,
        "U7": _check_u7,
        "U8": _check_u8,
    }
    if which not in dispatch:
        raise ValidationError(f"unknown axiom {which!r}")
    return dispatch[which](handle, config, rng)


def _sample_small_family(handle, rng, max_card):
    base = random_presheaf(handle.cat, rng, max_card)
    return random_family(base, rng, handle.bound)


def _check_u1(handle, config, rng):
    outcomes = []
    for idx in range(config.instances):
        f = _sample_small_family(handle, rng, config.max_card)
        Z = random_presheaf(handle.cat, rng, config.max_card)
        g = random_map(Z, f.cod, rng)
        if g is None:
            _record(outcomes, idx, "inconclusive", reason="no map from sampled shape")
            continue
        P, to_z, _to_q = pullback(g, f)
        pulled = to_z
        if max_fiber_size(pulled) >= handle.bound:
            _record(outcomes, idx, "fail", reason="pullback fiber exceeds bound")
            continue
        chi = classify(handle, f)
        chi_pulled = classify(handle, pulled)
        composed = tuple(
            tuple(chi.codes.at(c, g.comp[c][z]) for z in range(Z.carriers[c]))
            for c in range(handle.cat.n_objects())
        )
        if chi_pulled.codes.codes == composed:
            _record(outcomes, idx, "pass")
        else:
            _record(outcomes, idx, "fail", reason="classification does not commute with pullback")
    return AxiomReport("U1", outcomes)


def _check_u2(handle, config, rng):
    outcomes = []
    required = 2
    if handle.bound < required:
        return AxiomReport(
            "U2",
            [{"instance": 0, "outcome": "inconclusive", "reason": "monos need bound >= 2"}],
            required_bound=required,
        )
    for idx in range(config.instances):
        X = random_presheaf(handle.cat, rng, config.max_card)
        m = random_subobject(X, rng)
        if max_fiber_size(m) < handle.bound and m.is_mono():
            _record(outcomes, idx, "pass")
        else:
            _record(outcomes, idx, "fail", reason="mono fiber not small")
    return AxiomReport("U2", outcomes, required_bound=required)


def _sigma_codes_for(handle, f, g):
    """The sigma code map for the composite of two classified families."""
    chi_f = classify(handle, f)
    ext = context_extension(chi_f.codes)
    elems = [
        [
            (i, e)
            for i in range(f.cod.carriers[c])
            for e in range(chi_f.codes.at(c, i).el_size())
        ]
        for c in range(handle.cat.n_objects())
    ]
    chi_g = classify(handle, g)
    b = code_map_over(
        ext.dom,
        lambda c, k: chi_g.codes.at(c, fiber_elements(f, c, elems[c][k][0])[elems[c][k][1]]),
    )
    return chi_f, chi_g, code_sigma(chi_f.codes, b, handle.bound)


def _sigma_iso_holds(handle, f, g):
    """Explicit soundness of the sigma code against the composite family.

    The witness sends x to the pair (position of g(x) in the f-fiber,
    position of x in the g-fiber), which is how the sigma code enumerates
    its pairs; naturality and bijectivity are then checked directly.
    """
    _chi_f, _chi_g, sigma = _sigma_codes_for(handle, f, g)
    composite = compose_maps(f, g)
    sigma_total = code_family(sigma)
    cat = handle.cat
    st_index = [
        {
            (i, p): k
            for k, (i, p) in enumerate(
                (i, p)
                for i in range(f.cod.carriers[c])
                for p in range(sigma.at(c, i).el_size())
            )
        }
        for c in range(cat.n_objects())
    ]

    def pair_index(c, i, e, k):
        off = 0
        for e2 in range(e):
            a2 = fiber_elements(f, c, i)[e2]
            off += len(fiber_elements(g, c, a2))
        return off + k

    def component(c, x):
        a = g.comp[c][x]
        i = f.comp[c][a]
        e = fiber_elements(f, c, i).index(a)
        k = fiber_elements(g, c, a).index(x)
        return st_index[c][(i, pair_index(c, i, e, k))]

    try:
        iso = make_map(g.dom, sigma_total.dom, component)
    except ValidationError:
        return False
    return iso.is_iso() and compose_maps(sigma_total, iso).comp == composite.comp


def _family_bijection(f: PresheafMap, g: PresheafMap):
    """The fiberwise positional map dom(f) -> dom(g), if it is a natural iso.

    Sound when both families enumerate corresponding fibers in matching
    order (as the dependent product and the pi code do).
    """
    if f.cod != g.cod:
        return None
    cat = f.cod.cat
    for c in range(cat.n_objects()):
        for y in range(f.cod.carriers[c]):
            if len(fiber_elements(f, c, y)) != len(fiber_elements(g, c, y)):
                return None
    comp = []
    for c in range(cat.n_objects()):
        row = [0] * f.dom.carriers[c]
        for y in range(f.cod.carriers[c]):
            for k, x in enumerate(fiber_elements(f, c, y)):
                row[x] = fiber_elements(g, c, y)[k]
        comp.append(tuple(row))
    candidate = PresheafMap(f.dom, g.dom, tuple(comp))
    try:
        candidate.validate()
    except ValidationError:
        return None
    if candidate.is_iso():
        return candidate
    return None


def _check_u3(handle, config, rng):
    outcomes = []
    for idx in range(config.instances):
        f = _sample_small_family(handle, rng, config.max_card)
        g = random_family(f.dom, rng, handle.bound)
        composite = compose_maps(f, g)
        worst = max_fiber_size(composite)
        if worst >= handle.bound:
            _record(
                outcomes, idx, "inconclusive",
                reason="composite fiber exceeds bound", required_bound=worst + 1,
            )
            continue
        if _sigma_iso_holds(handle, f, g):
            _record(outcomes, idx, "pass")
        else:
            _record(outcomes, idx, "fail", reason="sigma code does not classify composite")
    return AxiomReport("U3", outcomes)


def _check_u4(handle, config, rng):
    outcomes = []
    for idx in range(config.instances):
        f = _sample_small_family(handle, rng, config.max_card)
        g = random_family(f.dom, rng, handle.bound)
        try:
            fg = dependent_product(f, g)
        except Exception as exc:  # cap blowups are inconclusive, not failures
            _record(outcomes, idx, "inconclusive", reason=str(exc))
            continue
        worst = max_fiber_size(fg)
        if worst >= handle.bound:
            _record(
                outcomes, idx, "inconclusive",
                reason="dependent product fiber exceeds bound", required_bound=worst + 1,
            )
            continue
        if _pi_matches_dependent_product(handle, f, g, fg):
            _record(outcomes, idx, "pass")
        else:
            _record(outcomes, idx, "fail", reason="pi code does not match dependent product")
    return AxiomReport("U4", outcomes)


def _pi_matches_dependent_product(handle, f, g, fg):
    chi_f = classify(handle, f)
    ext = context_extension(chi_f.codes)
    elems = [
        [
            (i, e)
            for i in range(f.cod.carriers[c])
            for e in range(chi_f.codes.at(c, i).el_size())
        ]
        for c in range(handle.cat.n_objects())
    ]
    chi_g = classify(handle, g)
    b = code_map_over(
        ext.dom,
        lambda c, k: chi_g.codes.at(c, fiber_elements(f, c, elems[c][k][0])[elems[c][k][1]]),
    )
    pi = code_pi(chi_f.codes, b, handle.bound)
    pi_total = code_family(pi)
    return _family_bijection(fg, pi_total) is not None


def _check_u5(handle, config, rng):
    outcomes = []
    for idx in range(config.instances):
        f = _sample_small_family(handle, rng, config.max_card)
        square = classify(handle, f)
        square_pullback_iso(square)
        empty = empty_presheaf(handle.cat)
        m = unique_map_from_empty(f.cod, empty)
        restricted, _ = restrict_family(f, m)
        partial = classify(handle, restricted)
        solution = realign_presheaf(handle, RealignmentProblem(m, f, partial))
        if solution.codes == square.codes and solution.align == square.align:
            _record(outcomes, idx, "pass")
        else:
            _record(
                outcomes, idx, "fail",
                reason="empty-mono realignment differs from canonical classification",
            )
    return AxiomReport("U5", outcomes)


def _check_u6(handle, config, rng):
    omega, _ = subobject_classifier(handle.cat)
    worst = max(omega.carriers)
    required = worst + 1
    if worst < handle.bound:
        outcomes = [{"instance": 0, "outcome": "pass", "omega_carriers": list(omega.carriers)}]
        return AxiomReport("U6", outcomes, required_bound=required)
    outcomes = [
        {
            "instance": 0,
            "outcome": "inconclusive",
            "reason": f"need bound >= {required}",
            "omega_carriers": list(omega.carriers),
        }
    ]
    return AxiomReport("U6", outcomes, required_bound=required)


def _check_u7(handle, config, rng):
    outcomes = []
    for idx in range(config.instances):
        f = _sample_small_family(handle, rng, config.max_card)
        epi = random_epi_onto(f.cod, rng)
        if epi is None:
            _record(outcomes, idx, "inconclusive", reason="no epi sampled")
            continue
        P, to_d, _ = pullback(epi, f)
        ok = True
        for c in range(handle.cat.n_objects()):
            for d_elt in range(epi.dom.carriers[c]):
                b = epi.comp[c][d_elt]
                if len(fiber_elements(to_d, c, d_elt)) != len(fiber_elements(f, c, b)):
                    ok = False
        if ok and max_fiber_size(f) < handle.bound:
            _record(outcomes, idx, "pass")
        else:
            _record(outcomes, idx, "fail", reason="descent along cartesian epi failed")
    return AxiomReport("U7", outcomes)


def sample_realignment_problem(handle, rng, max_card) -> RealignmentProblem:
    """A random problem with a (possibly non-canonical) partial classifier."""
    B = random_presheaf(handle.cat, rng, max_card)
    m = random_subobject(B, rng)
    f = random_family(B, rng, handle.bound)
    restricted, _ = restrict_family(f, m)
    partial = classify(handle, restricted)
    sigma = random_family_automorphism(restricted, rng)
    partial = permuted_square(partial, sigma)
    return RealignmentProblem(m, f, partial)


def _check_u8(handle, config, rng):
    outcomes = []
    for idx in range(config.instances):
        problem = sample_realignment_problem(handle, rng, config.max_card)
        solution = realign_presheaf(handle, problem)
        if solution.restricts_strictly_to(problem.partial, problem.mono):
            _record(outcomes, idx, "pass")
        else:
            _record(outcomes, idx, "fail", reason="solution boundary is not strict")
    return AxiomReport("U8", outcomes)
