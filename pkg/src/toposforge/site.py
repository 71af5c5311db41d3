"""Grothendieck topologies on finite categories and sheafification.

A topology is stored as the complete set of covering sieves per object and
validated against the three axioms exhaustively. Because the covering sets
of a validated topology are closed under pairwise intersection, each object
has a minimum covering sieve; the plus construction is computed as matching
families over that minimum sieve, which is the final stage of the filtered
colimit over refinements at finite scale.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ValidationError
from .fincat import FiniteCategory
from .presheaf import (
    Presheaf,
    PresheafMap,
    compose_maps,
    make_map,
    make_presheaf,
    matching_families,
    maximal_sieve,
    pull_sieve,
    sieves_on,
)


@dataclass(frozen=True)
class Topology:
    cat: FiniteCategory
    covers: tuple[tuple[frozenset, ...], ...]

    def is_covering(self, c: int, sieve: frozenset) -> bool:
        return sieve in self.covers[c]

    def s_min(self, c: int) -> frozenset:
        out = maximal_sieve(self.cat, c)
        for s in self.covers[c]:
            out &= s
        return out

    def is_trivial(self) -> bool:
        return all(len(cs) == 1 for cs in self.covers)


def trivial_topology(cat: FiniteCategory) -> Topology:
    return Topology(
        cat, tuple((maximal_sieve(cat, c),) for c in range(cat.n_objects()))
    )


def _close_generators(cat: FiniteCategory, c: int, generators) -> frozenset:
    members = set()
    for m in generators:
        if cat.dst[m] != c:
            raise ValidationError(
                f"sieve generator {cat.morphisms[m]} does not target {cat.objects[c]}"
            )
        members.add(m)
        for w in range(cat.n_morphisms()):
            if cat.dst[w] == cat.src[m]:
                members.add(cat.comp[m][w])
    return frozenset(members)


def validate_topology(cat: FiniteCategory, raw_covers) -> Topology:
    """Validate a coverage given by generating families.

    ``raw_covers`` maps object ids to lists of generating families (lists of
    morphism ids). Each family is closed under precomposition into a sieve,
    the maximal sieves are included automatically, and then the axioms are
    checked exhaustively: transitivity first (quantified over all sieves on
    each object), then stability. Violations name the axiom and a witness.
    """
    per_object: list[set] = [set() for _ in range(cat.n_objects())]
    for obj_name, families in raw_covers.items():
        c = cat.object_index(obj_name)
        for fam in families:
            gens = [cat.morphism_index(m) for m in fam]
            per_object[c].add(_close_generators(cat, c, gens))
    for c in range(cat.n_objects()):
        per_object[c].add(maximal_sieve(cat, c))
    order = [
        {s: i for i, s in enumerate(sieves_on(cat, c))} for c in range(cat.n_objects())
    ]
    covers = tuple(
        tuple(sorted(per_object[c], key=order[c].__getitem__))
        for c in range(cat.n_objects())
    )
    topo = Topology(cat, covers)
    for c in range(cat.n_objects()):
        for t in sieves_on(cat, c):
            if topo.is_covering(c, t):
                continue
            for r in covers[c]:
                if all(
                    topo.is_covering(cat.src[m], pull_sieve(cat, t, m)) for m in r
                ):
                    raise ValidationError(
                        f"transitivity violated at {cat.objects[c]}: sieve "
                        f"{sorted(cat.morphisms[m] for m in t)} is locally covering "
                        f"along {sorted(cat.morphisms[m] for m in r)} but not covering",
                        witness=(cat.objects[c], tuple(sorted(t)), tuple(sorted(r))),
                    )
    for c in range(cat.n_objects()):
        for s in covers[c]:
            for u in range(cat.n_morphisms()):
                if cat.dst[u] != c:
                    continue
                if not topo.is_covering(cat.src[u], pull_sieve(cat, s, u)):
                    raise ValidationError(
                        f"stability violated: pullback of a covering sieve on "
                        f"{cat.objects[c]} along {cat.morphisms[u]} is not covering",
                        witness=(cat.objects[c], tuple(sorted(s)), cat.morphisms[u]),
                    )
    for c in range(cat.n_objects()):
        for s in covers[c]:
            for t in covers[c]:
                if not topo.is_covering(c, s & t):
                    raise ValidationError(
                        f"covering sieves on {cat.objects[c]} not intersection-closed",
                        witness=(cat.objects[c], tuple(sorted(s)), tuple(sorted(t))),
                    )
    return topo


def is_sheaf(X: Presheaf, topo: Topology):
    """Sheaf test: restriction to each covering sieve is a bijection.

    Returns ``(True, None)`` or ``(False, witness)`` naming the object, the
    sieve, and whether the comparison failed injectivity or surjectivity.
    """
    cat = topo.cat
    for c in range(cat.n_objects()):
        for sieve in topo.covers[c]:
            members, fams = matching_families(X, cat, sieve)
            fam_index = {f: i for i, f in enumerate(fams)}
            seen = {}
            for x in range(X.carriers[c]):
                fam = tuple(X.act(x, u) for u in members)
                i = fam_index[fam]
                if i in seen:
                    return False, {
                        "object": cat.objects[c],
                        "sieve": tuple(cat.morphisms[m] for m in members),
                        "reason": "not separated",
                        "elements": (seen[i], x),
                    }
                seen[i] = x
            if len(seen) != len(fams):
                missing = next(i for i in range(len(fams)) if i not in seen)
                return False, {
                    "object": cat.objects[c],
                    "sieve": tuple(cat.morphisms[m] for m in members),
                    "reason": "matching family has no amalgamation",
                    "family": fams[missing],
                }
    return True, None


def plus_construction(X: Presheaf, topo: Topology) -> tuple[Presheaf, PresheafMap]:
    """One application of the plus construction at the minimum covering sieves."""
    cat = topo.cat
    data = []
    for c in range(cat.n_objects()):
        members, fams = matching_families(X, cat, topo.s_min(c))
        data.append((members, fams, {f: i for i, f in enumerate(fams)}))

    def rest_for(u, i):
        c, cp = cat.dst[u], cat.src[u]
        members, fams, _ = data[c]
        fam = dict(zip(members, fams[i]))
        members_p, _, index_p = data[cp]
        fam_p = tuple(fam[cat.comp[u][w]] for w in members_p)
        return index_p[fam_p]

    plus = make_presheaf(cat, (len(d[1]) for d in data), rest_for)
    unit = make_map(
        X,
        plus,
        lambda c, x: data[c][2][tuple(X.act(x, u) for u in data[c][0])],
    )
    return plus, unit


def sheafify(X: Presheaf, topo: Topology) -> tuple[Presheaf, PresheafMap]:
    """Sheafification as the plus construction applied twice, with its unit."""
    once, eta1 = plus_construction(X, topo)
    twice, eta2 = plus_construction(once, topo)
    ok, witness = is_sheaf(twice, topo)
    if not ok:
        raise ValidationError(f"plus construction failed to produce a sheaf: {witness}")
    return twice, compose_maps(eta2, eta1)


def plus_map(alpha: PresheafMap, topo: Topology) -> PresheafMap:
    cat = topo.cat
    X, Y = alpha.dom, alpha.cod
    Xp, _ = plus_construction(X, topo)
    Yp, _ = plus_construction(Y, topo)
    x_data, y_index = [], []
    for c in range(cat.n_objects()):
        members, fams = matching_families(X, cat, topo.s_min(c))
        x_data.append((members, fams))
        members_y, fams_y = matching_families(Y, cat, topo.s_min(c))
        y_index.append({f: i for i, f in enumerate(fams_y)})

    def component(c, i):
        members, fams = x_data[c]
        fam = fams[i]
        image = tuple(
            alpha.comp[cat.src[u]][fam[k]] for k, u in enumerate(members)
        )
        return y_index[c][image]

    return make_map(Xp, Yp, component)


def sheafify_map(alpha: PresheafMap, topo: Topology) -> PresheafMap:
    """The induced map between sheafifications (functorial, commutes with units)."""
    return plus_map(plus_map(alpha, topo), topo)


def factor_through_plus(alpha: PresheafMap, topo: Topology) -> PresheafMap:
    """Extend a map into a sheaf along the plus construction of its domain.

    For alpha: X -> F with F a sheaf, the value on a matching family is its
    unique amalgamation in F.
    """
    cat = topo.cat
    X, F = alpha.dom, alpha.cod
    Xp, _ = plus_construction(X, topo)
    data = [matching_families(X, cat, topo.s_min(c)) for c in range(cat.n_objects())]

    def component(c, i):
        members, fams = data[c]
        fam = fams[i]
        candidates = [
            y
            for y in range(F.carriers[c])
            if all(
                F.act(y, u) == alpha.comp[cat.src[u]][fam[k]]
                for k, u in enumerate(members)
            )
        ]
        if len(candidates) != 1:
            raise ValidationError(
                "amalgamation is not unique; codomain is not a sheaf for this site"
            )
        return candidates[0]

    return make_map(Xp, F, component)


def factor_through_sheafification(alpha: PresheafMap, topo: Topology) -> PresheafMap:
    """The unique factorization of alpha: X -> F (F a sheaf) through X -> X♯."""
    return factor_through_plus(factor_through_plus(alpha, topo), topo)
