"""The sheafified universe, generating monos, and a bounded small object argument.

The generic map here is the sheafification of the presheaf universe's
generic map; it classifies sheaf families (classify in presheaves, compose
with the sheafification units) but is not expected to realign. The small
object argument builds, stage by stage, a new generic map that solves
realignment problems along generating monos: each stage pushes out the
coproduct of all new realignment data (up to isomorphism) and records them
in a ledger so that solutions can later be read off the stage injections.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, replace

from .codes import restrict_family
from .errors import SizeCapError, ValidationError, guard_size
from .fincat import FiniteCategory
from .presheaf import (
    Diagram,
    Presheaf,
    PresheafMap,
    Square,
    all_maps,
    compose_maps,
    empty_presheaf,
    enumerate_congruences,
    enumerate_subobjects,
    fiber_elements,
    finite_colimit,
    identity_map,
    is_cartesian_square,
    make_map,
    max_fiber_size,
    pullback,
    quotient,
    yoneda,
)
from .sampling import family_isos
from .site import (
    Topology,
    factor_through_sheafification,
    is_sheaf,
    sheafify,
    sheafify_map,
)
from .universe import UniverseHandle, classify, hs_universe

DEFAULT_PERM_CAP = 50000


# --- Canonical forms up to isomorphism ---


def _perm_space(sizes, cap):
    total = 1
    for n in sizes:
        fact = 1
        for k in range(2, n + 1):
            fact *= k
        total *= fact
    guard_size("canonical form permutation search", total, cap)
    return itertools.product(*(itertools.permutations(range(n)) for n in sizes))


def _relabeled_presheaf(X: Presheaf, perms):
    inverse = [tuple(sorted(range(len(p)), key=p.__getitem__)) for p in perms]
    enc = [tuple(X.carriers)]
    for u in range(X.cat.n_morphisms()):
        c, cp = X.cat.dst[u], X.cat.src[u]
        enc.append(
            tuple(perms[cp][X.rest[u][inverse[c][i]]] for i in range(X.carriers[c]))
        )
    return tuple(enc)


def canonical_presheaf_key(X: Presheaf, perm_cap=DEFAULT_PERM_CAP):
    best = None
    for perms in _perm_space(X.carriers, perm_cap):
        enc = _relabeled_presheaf(X, perms)
        if best is None or enc < best:
            best = enc
    return best


def _relabeled_map(m: PresheafMap, dom_perms, cod_perms):
    inverse = [tuple(sorted(range(len(p)), key=p.__getitem__)) for p in dom_perms]
    return tuple(
        tuple(cod_perms[c][m.comp[c][inverse[c][i]]] for i in range(m.dom.carriers[c]))
        for c in range(m.dom.cat.n_objects())
    )


def canonical_arrow_key(m: PresheafMap, perm_cap=DEFAULT_PERM_CAP):
    """Minimal encoding of a map over independent relabelings of both ends."""
    best = None
    for dom_perms in _perm_space(m.dom.carriers, perm_cap):
        enc_dom = _relabeled_presheaf(m.dom, dom_perms)
        for cod_perms in _perm_space(m.cod.carriers, perm_cap):
            enc = (
                enc_dom,
                _relabeled_presheaf(m.cod, cod_perms),
                _relabeled_map(m, dom_perms, cod_perms),
            )
            if best is None or enc < best:
                best = enc
    return best


# --- The sheafified universe handle ---


class SheafUniverseHandle:
    def __init__(self, cat: FiniteCategory, topo: Topology, bound: int):
        self.cat = cat
        self.topo = topo
        self.bound = bound
        self.psh = hs_universe(cat, bound)
        self._generic: PresheafMap | None = None
        self._units: tuple[PresheafMap, PresheafMap] | None = None

    def generic_sheaf(self, cap=None) -> PresheafMap:
        """The sheafification of the presheaf generic map (cap-guarded)."""
        if self._generic is None:
            psh_generic = self.psh.generic_map(cap)
            ty_sh, unit_ty = sheafify(psh_generic.cod, self.topo)
            el_sh, unit_el = sheafify(psh_generic.dom, self.topo)
            ok_ty, wit = is_sheaf(ty_sh, self.topo)
            ok_el, wit_el = is_sheaf(el_sh, self.topo)
            if not (ok_ty and ok_el):
                raise ValidationError(f"sheafified universe is not a sheaf: {wit or wit_el}")
            self._generic = sheafify_map(psh_generic, self.topo)
            self._units = (unit_el, unit_ty)
        return self._generic

    def units(self, cap=None) -> tuple[PresheafMap, PresheafMap]:
        self.generic_sheaf(cap)
        return self._units


def sheaf_universe(cat: FiniteCategory, topo: Topology, bound: int) -> SheafUniverseHandle:
    return SheafUniverseHandle(cat, topo, bound)


def sheafify_family(family: PresheafMap, topo: Topology) -> PresheafMap:
    return sheafify_map(family, topo)


@dataclass(frozen=True)
class SheafClassification:
    square: Square
    witness: PresheafMap


def classify_sheaf_family(handle: SheafUniverseHandle, family: PresheafMap) -> SheafClassification:
    """Classify a sheaf family: presheaf classification pasted with the units.

    The resulting square into the sheafified generic map is verified
    cartesian (sheafification is left exact), and the comparison map into
    the computed pullback is returned as the soundness witness.
    """
    ok_dom, _ = is_sheaf(family.dom, handle.topo)
    ok_cod, _ = is_sheaf(family.cod, handle.topo)
    if not (ok_dom and ok_cod):
        raise ValidationError("classify_sheaf_family requires a family of sheaves")
    virtual = classify(handle.psh, family)
    psh_square = handle.psh.square_as_maps(virtual)
    unit_el, unit_ty = handle.units()
    bottom = compose_maps(unit_ty, psh_square.bottom)
    top = compose_maps(unit_el, psh_square.top)
    square = Square(top=top, bottom=bottom, left=family, right=handle.generic_sheaf())
    cartesian, witness = is_cartesian_square(square)
    if not cartesian:
        raise ValidationError(f"sheaf classification square is not cartesian: {witness}")
    return SheafClassification(square, witness)


# --- Generating monomorphisms ---


@dataclass(frozen=True)
class GeneratingMono:
    """A sheafified subobject of a quotient of a representable."""

    mono: PresheafMap
    source_object: str
    congruence_index: int
    subobject_index: int


def generating_monos(handle: SheafUniverseHandle, cap=None, perm_cap=DEFAULT_PERM_CAP):
    """Sheafify every subobject of every congruence quotient of every
    representable, deduplicated up to isomorphism of arrows."""
    cat = handle.cat
    out: list[GeneratingMono] = []
    seen = set()
    for c in range(cat.n_objects()):
        y_c = yoneda(cat, c)
        for cong_idx, cong in enumerate(enumerate_congruences(y_c, cap)):
            quot, _ = quotient(y_c, cong)
            for sub_idx, mono0 in enumerate(enumerate_subobjects(quot, cap)):
                mono = sheafify_map(mono0, handle.topo)
                if not mono.is_mono():
                    raise ValidationError(
                        "sheafification failed to preserve a generating mono"
                    )
                key = canonical_arrow_key(mono, perm_cap)
                if key in seen:
                    continue
                seen.add(key)
                out.append(GeneratingMono(mono, cat.objects[c], cong_idx, sub_idx))
    return out


# --- Realignment data and the staged construction ---


@dataclass(frozen=True)
class RealignmentDatum:
    """A generating mono, a small family over its codomain, and a cartesian
    square from the restricted family into the current stage generic map."""

    mono: PresheafMap
    family: PresheafMap
    h_proj: PresheafMap
    h_top: PresheafMap
    part_bottom: PresheafMap
    part_top: PresheafMap

    def key(self, perm_cap=DEFAULT_PERM_CAP):
        A, B, Q = self.mono.dom, self.mono.cod, self.family.dom
        best = None
        for pA in _perm_space(A.carriers, perm_cap):
            encA = _relabeled_presheaf(A, pA)
            enc_bottom = tuple(
                tuple(
                    self.part_bottom.comp[c][
                        tuple(sorted(range(len(pA[c])), key=pA[c].__getitem__))[i]
                    ]
                    for i in range(A.carriers[c])
                )
                for c in range(A.cat.n_objects())
            )
            for pQ in _perm_space(Q.carriers, perm_cap):
                encQ = _relabeled_presheaf(Q, pQ)
                enc_top = _relabeled_h(self, pA, pQ)
                for pB in _perm_space(B.carriers, perm_cap):
                    enc = (
                        encA,
                        _relabeled_presheaf(B, pB),
                        encQ,
                        _relabeled_map(self.mono, pA, pB),
                        _relabeled_map(self.family, pQ, pB),
                        enc_bottom,
                        enc_top,
                    )
                    if best is None or enc < best:
                        best = enc
        return best


def _h_pairs(datum: RealignmentDatum):
    """The (a, q) pair labels of the restricted family's carriers."""
    A = datum.mono.dom
    out = []
    for c in range(A.cat.n_objects()):
        out.append(
            [
                (a, q)
                for a in range(A.carriers[c])
                for q in fiber_elements(datum.family, c, datum.mono.comp[c][a])
            ]
        )
    return out


def _relabeled_h(datum: RealignmentDatum, pA, pQ):
    """The part_top table re-expressed over relabeled (a, q) pairs."""
    pairs = _h_pairs(datum)
    enc = []
    for c in range(datum.mono.dom.cat.n_objects()):
        relabeled = sorted(
            (pA[c][a], pQ[c][q], datum.part_top.comp[c][i])
            for i, (a, q) in enumerate(pairs[c])
        )
        enc.append(tuple(v for (_a, _q, v) in relabeled))
    return tuple(enc)


def make_datum(mono, family, part_bottom, part_top) -> RealignmentDatum:
    h_proj, h_top = restrict_family(family, mono)
    return RealignmentDatum(mono, family, h_proj, h_top, part_bottom, part_top)


def datum_isomorphism(problem: RealignmentDatum, entry: RealignmentDatum, perm_cap=DEFAULT_PERM_CAP):
    """Explicit iso (on A, B, Q) carrying ``problem`` onto ``entry``.

    Returns presheaf maps (isoA, isoB, isoQ) commuting with the monos,
    families, and the stage maps, or None.
    """
    A, B, Q = problem.mono.dom, problem.mono.cod, problem.family.dom
    A2, B2, Q2 = entry.mono.dom, entry.mono.cod, entry.family.dom
    if A.carriers != A2.carriers or B.carriers != B2.carriers or Q.carriers != Q2.carriers:
        return None
    pairs1 = _h_pairs(problem)
    pairs2 = _h_pairs(entry)
    index2 = [
        {p: i for i, p in enumerate(row)} for row in pairs2
    ]
    for pA in _perm_space(A.carriers, perm_cap):
        isoA = PresheafMap(A, A2, tuple(pA))
        try:
            isoA.validate()
        except ValidationError:
            continue
        for pB in _perm_space(B.carriers, perm_cap):
            isoB = PresheafMap(B, B2, tuple(pB))
            try:
                isoB.validate()
            except ValidationError:
                continue
            if compose_maps(entry.mono, isoA).comp != compose_maps(isoB, problem.mono).comp:
                continue
            for pQ in _perm_space(Q.carriers, perm_cap):
                isoQ = PresheafMap(Q, Q2, tuple(pQ))
                try:
                    isoQ.validate()
                except ValidationError:
                    continue
                if compose_maps(entry.family, isoQ).comp != compose_maps(isoB, problem.family).comp:
                    continue
                if compose_maps(entry.part_bottom, isoA).comp != problem.part_bottom.comp:
                    continue
                ok = True
                for c in range(A.cat.n_objects()):
                    for i, (a, q) in enumerate(pairs1[c]):
                        j = index2[c][(pA[c][a], pQ[c][q])]
                        if entry.part_top.comp[c][j] != problem.part_top.comp[c][i]:
                            ok = False
                            break
                    if not ok:
                        break
                if ok:
                    return isoA, isoB, isoQ
    return None


@dataclass(frozen=True)
class LedgerEntry:
    datum: RealignmentDatum
    stage: int
    sol_bottom: PresheafMap
    sol_top: PresheafMap
    key: tuple


@dataclass(frozen=True)
class SoaCaps:
    max_families_per_codomain: int = 6
    max_squares_per_family: int = 4
    max_data_per_stage: int = 6
    perm_cap: int = DEFAULT_PERM_CAP


@dataclass(frozen=True)
class SoaState:
    handle: SheafUniverseHandle
    generators: tuple[GeneratingMono, ...]
    generic: PresheafMap
    links: tuple[tuple[PresheafMap, PresheafMap], ...]
    ledger: tuple[LedgerEntry, ...]
    caps: SoaCaps

    def stage_index(self) -> int:
        return len(self.links)


def soa_init(handle: SheafUniverseHandle, caps: SoaCaps | None = None) -> SoaState:
    """Stage zero: the initial sheaf family (empty over empty)."""
    caps = caps or SoaCaps()
    zero, _ = sheafify(empty_presheaf(handle.cat), handle.topo)
    pi0 = identity_map(zero)
    gens = tuple(generating_monos(handle, perm_cap=caps.perm_cap))
    return SoaState(handle, gens, pi0, (), (), caps)


def _family_dedup_key(f: PresheafMap, perm_cap):
    """Iso-over-the-base key: the codomain is held fixed, only the total
    space is relabeled."""
    best = None
    for pQ in _perm_space(f.dom.carriers, perm_cap):
        enc = (_relabeled_presheaf(f.dom, pQ), _relabeled_map(f, pQ, _identity_perms(f.cod)))
        if best is None or enc < best:
            best = enc
    return best


def _identity_perms(X: Presheaf):
    return tuple(tuple(range(n)) for n in X.carriers)


def enumerate_families_over(handle: SheafUniverseHandle, B: Presheaf, caps: SoaCaps):
    """Small sheaf families over B, up to iso over B: pull the sheafified
    generic map back along every classifying map."""
    ty = handle.generic_sheaf().cod
    out, seen = [], set()
    for chi in all_maps(B, ty):
        P, to_b, _ = pullback(chi, handle.generic_sheaf())
        if max_fiber_size(to_b) >= handle.bound:
            continue
        key = _family_dedup_key(to_b, caps.perm_cap)
        if key in seen:
            continue
        seen.add(key)
        out.append(to_b)
        if len(out) >= caps.max_families_per_codomain:
            break
    return out


def _cartesian_squares_into(generic: PresheafMap, h_proj: PresheafMap, limit: int):
    """All cartesian maps from a family into the stage generic map."""
    out = []
    A = h_proj.cod
    for bottom in all_maps(A, generic.cod):
        P, to_a, to_e = pullback(bottom, generic)
        for phi in family_isos(h_proj, to_a, limit=limit):
            out.append((bottom, compose_maps(to_e, phi)))
            if len(out) >= limit:
                return out
    return out


def enumerate_realignment_data(state: SoaState) -> list[RealignmentDatum]:
    """All new realignment data against the current stage, deduplicated up
    to isomorphism and excluding data already adjoined to the ledger."""
    handle, caps = state.handle, state.caps
    known = {entry.key for entry in state.ledger}
    out, seen = [], set()
    for gen in state.generators:
        B = gen.mono.cod
        for family in enumerate_families_over(handle, B, caps):
            h_proj, h_top = restrict_family(family, gen.mono)
            squares = _cartesian_squares_into(state.generic, h_proj, caps.max_squares_per_family)
            for bottom, top in squares:
                datum = RealignmentDatum(gen.mono, family, h_proj, h_top, bottom, top)
                key = datum.key(caps.perm_cap)
                if key in known or key in seen:
                    continue
                seen.add(key)
                out.append(datum)
                if len(out) >= caps.max_data_per_stage:
                    return out
    return out


def soa_extend_stage(state: SoaState) -> SoaState:
    """Adjoin all new realignment data by pushout in the arrow category.

    The pushout is computed pointwise in presheaves and sheafified; the
    stage link and every adjoined solution square are re-verified to be
    cartesian (monic for the link), and stage fibers re-checked small.
    """
    handle, topo = state.handle, state.handle.topo
    data = enumerate_realignment_data(state)
    pi_n = state.generic
    if not data:
        link = (identity_map(pi_n.dom), identity_map(pi_n.cod))
        return replace(state, links=state.links + (link,))
    base_nodes = [pi_n.cod] + [d.mono.dom for d in data] + [d.mono.cod for d in data]
    base_edges = []
    for k, d in enumerate(data):
        base_edges.append((1 + k, 0, d.part_bottom))
        base_edges.append((1 + k, 1 + len(data) + k, d.mono))
    base_colim = finite_colimit(handle.cat, Diagram(tuple(base_nodes), tuple(base_edges)))
    total_nodes = [pi_n.dom] + [d.h_proj.dom for d in data] + [d.family.dom for d in data]
    total_edges = []
    for k, d in enumerate(data):
        total_edges.append((1 + k, 0, d.part_top))
        total_edges.append((1 + k, 1 + len(data) + k, d.h_top))
    total_colim = finite_colimit(handle.cat, Diagram(tuple(total_nodes), tuple(total_edges)))
    cocone = [compose_maps(base_colim.injections[0], pi_n)]
    for k, d in enumerate(data):
        cocone.append(
            compose_maps(base_colim.injections[0], compose_maps(pi_n, d.part_top))
        )
    for k, d in enumerate(data):
        cocone.append(
            compose_maps(base_colim.injections[1 + len(data) + k], d.family)
        )
    pi_psh = total_colim.comediate(tuple(cocone))
    new_total, unit_total = sheafify(pi_psh.dom, topo)
    new_base, unit_base = sheafify(pi_psh.cod, topo)
    pi_next = sheafify_map(pi_psh, topo)
    link_top = compose_maps(unit_total, total_colim.injections[0])
    link_bottom = compose_maps(unit_base, base_colim.injections[0])
    link_square = Square(top=link_top, bottom=link_bottom, left=pi_n, right=pi_next)
    cartesian, witness = is_cartesian_square(link_square)
    if not (cartesian and link_top.is_mono() and link_bottom.is_mono()):
        raise ValidationError(f"stage link is not a cartesian mono: {witness}")
    if max_fiber_size(pi_next) >= handle.bound:
        raise ValidationError("stage family has a fiber exceeding the bound")
    ok_t, _ = is_sheaf(pi_next.dom, topo)
    ok_b, _ = is_sheaf(pi_next.cod, topo)
    if not (ok_t and ok_b):
        raise ValidationError("stage family is not a sheaf family")
    new_ledger = []
    for e in state.ledger:
        datum2 = replace(
            e.datum,
            part_bottom=compose_maps(link_bottom, e.datum.part_bottom),
            part_top=compose_maps(link_top, e.datum.part_top),
        )
        new_ledger.append(
            LedgerEntry(
                datum=datum2,
                stage=e.stage,
                sol_bottom=compose_maps(link_bottom, e.sol_bottom),
                sol_top=compose_maps(link_top, e.sol_top),
                key=datum2.key(state.caps.perm_cap),
            )
        )
    stage_idx = state.stage_index()
    for k, d in enumerate(data):
        sol_bottom = compose_maps(unit_base, base_colim.injections[1 + len(data) + k])
        sol_top = compose_maps(unit_total, total_colim.injections[1 + len(data) + k])
        sol_square = Square(top=sol_top, bottom=sol_bottom, left=d.family, right=pi_next)
        cartesian, witness = is_cartesian_square(sol_square)
        if not cartesian:
            raise ValidationError(f"adjoined solution square is not cartesian: {witness}")
        if compose_maps(sol_bottom, d.mono).comp != compose_maps(link_bottom, d.part_bottom).comp:
            raise ValidationError("adjoined solution does not restrict strictly (base)")
        if compose_maps(sol_top, d.h_top).comp != compose_maps(link_top, d.part_top).comp:
            raise ValidationError("adjoined solution does not restrict strictly (total)")
        datum_next = replace(
            d,
            part_bottom=compose_maps(link_bottom, d.part_bottom),
            part_top=compose_maps(link_top, d.part_top),
        )
        new_ledger.append(
            LedgerEntry(
                datum=datum_next,
                stage=stage_idx,
                sol_bottom=sol_bottom,
                sol_top=sol_top,
                key=datum_next.key(state.caps.perm_cap),
            )
        )
    return replace(
        state,
        generic=pi_next,
        links=state.links + ((link_top, link_bottom),),
        ledger=tuple(new_ledger),
    )


@dataclass(frozen=True)
class SoaSolution:
    bottom: PresheafMap
    top: PresheafMap
    stage: int


def soa_solve(state: SoaState, problem: RealignmentDatum):
    """Solve a realignment problem whose datum was adjoined at some stage.

    Returns a ``SoaSolution`` (cartesian, strictly restricting along the
    problem's mono), or the string "unresolved within budget" when the
    datum is not in the computed ledger.
    """
    key = problem.key(state.caps.perm_cap)
    for entry in state.ledger:
        if entry.key != key:
            continue
        iso = datum_isomorphism(problem, entry.datum, state.caps.perm_cap)
        if iso is None:
            continue
        isoA, isoB, isoQ = iso
        bottom = compose_maps(entry.sol_bottom, isoB)
        top = compose_maps(entry.sol_top, isoQ)
        square = Square(top=top, bottom=bottom, left=problem.family, right=state.generic)
        cartesian, witness = is_cartesian_square(square)
        if not cartesian:
            raise ValidationError(f"transported solution is not cartesian: {witness}")
        if compose_maps(bottom, problem.mono).comp != problem.part_bottom.comp:
            raise ValidationError("transported solution boundary (base) is not strict")
        if compose_maps(top, problem.h_top).comp != problem.part_top.comp:
            raise ValidationError("transported solution boundary (total) is not strict")
        return SoaSolution(bottom, top, entry.stage)
    return "unresolved within budget"


# --- Saturation closure of solvable monos: pushout, composition, retract ---


@dataclass(frozen=True)
class DoubleGluing:
    """The pushout of a ledger entry's mono along itself, with the family
    glued over it: the standing instance shape for the closure checks."""

    entry: LedgerEntry
    base: Presheaf
    inj_first: PresheafMap
    inj_second: PresheafMap
    family: PresheafMap
    total_unit_first: PresheafMap
    total_unit_second: PresheafMap
    base_colim_psh: object
    total_colim_psh: object


def _double_gluing(state: SoaState, entry: LedgerEntry) -> DoubleGluing:
    topo = state.handle.topo
    d = entry.datum
    m, f = d.mono, d.family
    A, B, Q, H = m.dom, m.cod, f.dom, d.h_proj.dom
    base_colim = finite_colimit(
        state.handle.cat, Diagram((A, B, B), ((0, 1, m), (0, 2, m)))
    )
    total_colim = finite_colimit(
        state.handle.cat, Diagram((H, Q, Q), ((0, 1, d.h_top), (0, 2, d.h_top)))
    )
    f_psh = total_colim.comediate(
        (
            compose_maps(base_colim.injections[1], compose_maps(f, d.h_top)),
            compose_maps(base_colim.injections[1], f),
            compose_maps(base_colim.injections[2], f),
        )
    )
    f_sh = sheafify_map(f_psh, topo)
    _, unit_base = sheafify(f_psh.cod, topo)
    _, unit_total = sheafify(f_psh.dom, topo)
    inj_first = compose_maps(unit_base, base_colim.injections[1])
    inj_second = compose_maps(unit_base, base_colim.injections[2])
    if not (inj_first.is_mono() and inj_second.is_mono()):
        raise ValidationError("pushout injection along a mono failed to be monic")
    return DoubleGluing(
        entry=entry,
        base=f_sh.cod,
        inj_first=inj_first,
        inj_second=inj_second,
        family=f_sh,
        total_unit_first=compose_maps(unit_total, total_colim.injections[1]),
        total_unit_second=compose_maps(unit_total, total_colim.injections[2]),
        base_colim_psh=base_colim,
        total_colim_psh=total_colim,
    )


def _copy_comparison(glue: DoubleGluing, which: int) -> PresheafMap:
    """The canonical iso from the entry family onto the restriction of the
    glued family along one pushout injection (descent made explicit)."""
    d = glue.entry.datum
    inj = glue.inj_first if which == 1 else glue.inj_second
    tot = glue.total_unit_first if which == 1 else glue.total_unit_second
    proj, _top = restrict_family(glue.family, inj)
    Q = d.family.dom
    cat = Q.cat
    pair_index = [
        {
            pair: i
            for i, pair in enumerate(
                (a, q)
                for a in range(inj.dom.carriers[c])
                for q in fiber_elements(glue.family, c, inj.comp[c][a])
            )
        }
        for c in range(cat.n_objects())
    ]
    comparison = make_map(
        Q,
        proj.dom,
        lambda c, q: pair_index[c][(d.family.comp[c][q], tot.comp[c][q])],
    )
    if not comparison.is_iso():
        raise ValidationError("descent comparison along a pushout injection is not iso")
    return comparison


def _solve_over_pushout_injection(state, glue, given_bottom, given_top_on_Q):
    """Re-enact pushout stability: solve the glued problem over the second
    injection from a given partial expressed on the entry family.

    ``given_top_on_Q`` is the partial's top transported onto the entry's
    total space Q (via the canonical descent comparison). Returns the
    solution square over the whole pushout base.
    """
    topo = state.handle.topo
    entry = glue.entry
    d = entry.datum
    inner = soa_solve(state, d)
    if not isinstance(inner, SoaSolution):
        raise ValidationError("inner problem was not solvable from the ledger")
    base_colim = glue.base_colim_psh
    total_colim = glue.total_colim_psh
    bottom_psh = base_colim.comediate(
        (
            compose_maps(inner.bottom, d.mono),
            inner.bottom,
            given_bottom,
        )
    )
    bottom = factor_through_sheafification(bottom_psh, topo)
    top_psh = total_colim.comediate(
        (
            compose_maps(inner.top, d.h_top),
            inner.top,
            given_top_on_Q,
        )
    )
    top = factor_through_sheafification(top_psh, topo)
    square = Square(top=top, bottom=bottom, left=glue.family, right=state.generic)
    cartesian, witness = is_cartesian_square(square)
    if not cartesian:
        raise ValidationError(f"assembled pushout solution is not cartesian: {witness}")
    return bottom, top


def _check_pushout_instance(state: SoaState, entry: LedgerEntry):
    """A problem over the pushout of the entry's mono along itself, whose
    partial classifier is the entry's own solution on the second copy."""
    glue = _double_gluing(state, entry)
    _copy_comparison(glue, 2)  # instance validity: descent iso exists
    bottom, top = _solve_over_pushout_injection(
        state, glue, entry.sol_bottom, entry.sol_top
    )
    if compose_maps(bottom, glue.inj_second).comp != entry.sol_bottom.comp:
        raise ValidationError("pushout solution boundary (base) is not strict")
    if compose_maps(top, glue.total_unit_second).comp != entry.sol_top.comp:
        raise ValidationError("pushout solution boundary (total) is not strict")
    return {"mode": "pushout", "outcome": "pass"}


def _check_composition_instance(state: SoaState, entry: LedgerEntry):
    """Closure under finite composition: solve over A -> B -> B⊔_A B by
    successive gluing and check strictness of the composite boundary."""
    d = entry.datum
    glue = _double_gluing(state, entry)
    composite = compose_maps(glue.inj_first, d.mono)
    if not composite.is_mono():
        raise ValidationError("composite of monos is not monic")
    sol1 = soa_solve(state, d)
    if not isinstance(sol1, SoaSolution):
        raise ValidationError("first link of the composite is unsolvable")
    bottom, top = _solve_over_pushout_injection(state, glue, sol1.bottom, sol1.top)
    if compose_maps(bottom, glue.inj_first).comp != sol1.bottom.comp:
        raise ValidationError("composition: intermediate boundary not strict")
    if compose_maps(bottom, composite).comp != d.part_bottom.comp:
        raise ValidationError("composition: final base boundary is not strict")
    top_on_H = compose_maps(top, compose_maps(glue.total_unit_first, d.h_top))
    if top_on_H.comp != d.part_top.comp:
        raise ValidationError("composition: final total boundary is not strict")
    return {"mode": "composition", "outcome": "pass"}


def _pullback_pair_index(P, to_D, to_Q, c, dval, qval):
    for i in range(P.carriers[c]):
        if to_D.comp[c][i] == dval and to_Q.comp[c][i] == qval:
            return i
    raise ValidationError("pullback pair not found")


def _check_retract_instance(state: SoaState, entry: LedgerEntry):
    """Closure under retracts, on an entry with empty subobject part.

    The identity mono on the entry's base B is exhibited as a retract of
    the pushout injection B -> B⊔B via the fold map; the entry's problem is
    pulled back along the fold, solved over the injection, and restricted
    back along the section. The recovered solution must equal the given
    one bitwise.
    """
    topo = state.handle.topo
    d = entry.datum
    if d.mono.dom.total_size() != 0:
        raise ValidationError("retract instance needs an empty-subobject entry")
    glue = _double_gluing(state, entry)
    fold_psh = glue.base_colim_psh.comediate(
        (d.mono, identity_map(d.mono.cod), identity_map(d.mono.cod))
    )
    fold = factor_through_sheafification(fold_psh, topo)
    section = glue.inj_second
    if compose_maps(fold, section).comp != identity_map(d.mono.cod).comp:
        raise ValidationError("retract: fold is not a retraction of the injection")
    P, to_D, to_Q = pullback(fold, d.family)
    cat = state.handle.cat
    leg1 = make_map(
        d.family.dom,
        P,
        lambda c, q: _pullback_pair_index(
            P, to_D, to_Q, c, glue.inj_first.comp[c][d.family.comp[c][q]], q
        ),
    )
    leg2 = make_map(
        d.family.dom,
        P,
        lambda c, q: _pullback_pair_index(
            P, to_D, to_Q, c, glue.inj_second.comp[c][d.family.comp[c][q]], q
        ),
    )
    legH = make_map(d.h_proj.dom, P, lambda c, i: 0)  # empty domain
    chi_psh = glue.total_colim_psh.comediate((legH, leg1, leg2))
    chi = factor_through_sheafification(chi_psh, topo)
    if not chi.is_iso() or compose_maps(to_D, chi).comp != glue.family.comp:
        raise ValidationError("retract: glued family does not match the pulled-back one")
    bottom_g, top_g = _solve_over_pushout_injection(
        state, glue, entry.sol_bottom, entry.sol_top
    )
    top_p = compose_maps(top_g, chi.inverse())
    bottom_i = compose_maps(bottom_g, section)
    top_i = compose_maps(top_p, leg2)
    square = Square(top=top_i, bottom=bottom_i, left=d.family, right=state.generic)
    cartesian, witness = is_cartesian_square(square)
    if not cartesian:
        raise ValidationError(f"retract: restricted solution not cartesian: {witness}")
    if bottom_i.comp != entry.sol_bottom.comp or top_i.comp != entry.sol_top.comp:
        raise ValidationError("retract: recovered solution is not bitwise the given one")
    return {"mode": "retract", "outcome": "pass"}


def saturation_check(state: SoaState, mode: str, instances: int, seed: int = 0) -> dict:
    """Re-enact one of the three closure proofs on constructed instances.

    Instances are built from solvable base problems: each ledger entry
    yields a pushout (double gluing of its mono), a two-step composite, and
    a retract presentation; the corresponding proof is executed and every
    boundary checked bitwise.
    """
    if not state.ledger:
        raise ValidationError("saturation_check needs a non-empty ledger")
    rng = random.Random(seed)
    checkers = {
        "pushout": _check_pushout_instance,
        "composition": _check_composition_instance,
        "retract": _check_retract_instance,
    }
    if mode not in checkers:
        raise ValidationError(f"unknown saturation mode {mode!r}")
    pool = list(state.ledger)
    if mode == "retract":
        pool = [e for e in pool if e.datum.mono.dom.total_size() == 0]
        if not pool:
            return {
                "mode": mode,
                "instances": 0,
                "failures": 0,
                "outcomes": [{"outcome": "inconclusive", "reason": "no empty-subobject entries"}],
            }
    outcomes = []
    for idx in range(instances):
        entry = pool[rng.randrange(len(pool))]
        try:
            result = checkers[mode](state, entry)
        except SizeCapError as exc:
            result = {"mode": mode, "outcome": "inconclusive", "reason": str(exc)}
        result["instance"] = idx
        outcomes.append(result)
    failures = [o for o in outcomes if o["outcome"] not in ("pass", "inconclusive")]
    return {
        "mode": mode,
        "instances": len(outcomes),
        "failures": len(failures),
        "outcomes": outcomes,
    }


# --- Search for realignment failures of the plain sheafified universe ---


@dataclass(frozen=True)
class U8SearchBudget:
    max_bases: int = 4
    max_monos: int = 6
    max_families: int = 4
    max_partials: int = 6
    iso_limit: int = 16


def _quotient_base_pool(handle: SheafUniverseHandle, budget, perm_cap=DEFAULT_PERM_CAP):
    cat = handle.cat
    pool, seen = [], set()
    for c in range(cat.n_objects()):
        y_c = yoneda(cat, c)
        for cong in enumerate_congruences(y_c):
            quot, _ = quotient(y_c, cong)
            sheaf, _ = sheafify(quot, handle.topo)
            key = canonical_presheaf_key(sheaf, perm_cap)
            if key in seen:
                continue
            seen.add(key)
            pool.append(sheaf)
            if len(pool) >= budget.max_bases:
                return pool
    return pool


def u8_search(handle: SheafUniverseHandle, budget: U8SearchBudget | None = None) -> dict:
    """Exhaustively test realignment against the plain sheafified generic map.

    Every problem within the budget is checked for the existence of any
    strict extension (search over all classifying maps and compatible
    fiber isomorphisms). Failures are returned with full witnesses; the
    search itself is the oracle and no outcome is asserted here.
    """
    budget = budget or U8SearchBudget()
    generic = handle.generic_sheaf()
    ty = generic.cod
    outcomes = []
    failures = []
    problems = 0
    for B in _quotient_base_pool(handle, budget):
        monos = [
            m
            for m in enumerate_subobjects(B)
            if is_sheaf(m.dom, handle.topo)[0]
        ][: budget.max_monos]
        chis = list(all_maps(B, ty))[: budget.max_families]
        for m in monos:
            for chi in chis:
                _pb, family, _to_e = pullback(chi, generic)
                if max_fiber_size(family) >= handle.bound:
                    continue
                h_proj, h_top = restrict_family(family, m)
                partials = []
                for alpha in all_maps(m.dom, ty):
                    Pa, to_a, to_e = pullback(alpha, generic)
                    for phi in family_isos(h_proj, to_a, limit=budget.iso_limit):
                        partials.append((alpha, compose_maps(to_e, phi)))
                        if len(partials) >= budget.max_partials:
                            break
                    if len(partials) >= budget.max_partials:
                        break
                for alpha, top in partials:
                    problems += 1
                    solved = _strict_extension_exists(
                        handle, generic, ty, m, family, h_top, alpha, top, budget
                    )
                    if not solved:
                        failures.append(
                            {
                                "base_carriers": list(B.carriers),
                                "mono_carriers": list(m.dom.carriers),
                                "partial_codes": [list(r) for r in alpha.comp],
                            }
                        )
                    outcomes.append({"solved": solved})
    return {
        "problems": problems,
        "failures": failures,
        "failure_count": len(failures),
    }


def _strict_extension_exists(handle, generic, ty, m, family, h_top, alpha, top, budget):
    B = m.cod
    for chi in all_maps(B, ty):
        if compose_maps(chi, m).comp != alpha.comp:
            continue
        P2, to_b, to_e = pullback(chi, generic)
        fixed = {}
        bad = False
        for c in range(B.cat.n_objects()):
            for i in range(h_top.dom.carriers[c]):
                q = h_top.comp[c][i]
                want = top.comp[c][i]
                b = family.comp[c][q]
                candidates = [
                    p
                    for p in range(P2.carriers[c])
                    if to_b.comp[c][p] == b and to_e.comp[c][p] == want
                ]
                if not candidates:
                    bad = True
                    break
                fixed[(c, q)] = candidates[0]
            if bad:
                break
        if bad:
            continue
        if family_isos(family, to_b, fixed=fixed, limit=1):
            return True
    return False
