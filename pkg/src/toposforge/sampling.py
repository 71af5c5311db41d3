"""Seeded random generation of presheaves, maps, families, and subobjects.

All generators take an explicit ``random.Random``; identical seeds give
identical output, which keeps sampled reports byte-reproducible.
"""

from __future__ import annotations

import itertools
import random

from .fincat import FiniteCategory
from .presheaf import (
    Presheaf,
    PresheafMap,
    elements_category,
    make_map,
    make_presheaf,
    restriction_closure,
    sub_presheaf,
)

DEFAULT_TRIES = 2000


def random_presheaf(cat: FiniteCategory, rng: random.Random, max_card: int = 3) -> Presheaf:
    """A uniform-ish random presheaf with carriers of size <= max_card.

    Tables for all morphisms are drawn at random and rejected until
    functorial; identity tables are forced. Rejection terminates quickly on
    desk-scale categories because most tables on posety shapes are lawful.
    """
    for _ in range(DEFAULT_TRIES):
        carriers = tuple(rng.randint(0, max_card) for _ in range(cat.n_objects()))
        rest = []
        for u in range(cat.n_morphisms()):
            n_dst, n_src = carriers[cat.dst[u]], carriers[cat.src[u]]
            if cat.is_identity(u):
                rest.append(tuple(range(n_dst)))
            elif n_src == 0 and n_dst > 0:
                break
            else:
                rest.append(tuple(rng.randrange(n_src) for _ in range(n_dst)))
        else:
            candidate = Presheaf(cat, carriers, tuple(rest))
            if _functorial(candidate):
                return candidate
    raise RuntimeError("random_presheaf: rejection sampling failed to converge")


def _functorial(X: Presheaf) -> bool:
    cat = X.cat
    for g in range(cat.n_morphisms()):
        for f in range(cat.n_morphisms()):
            if cat.dst[g] != cat.src[f]:
                continue
            fg = cat.comp[f][g]
            for x in range(X.carriers[cat.dst[f]]):
                if X.rest[fg][x] != X.rest[g][X.rest[f][x]]:
                    return False
    return True


def random_map(X: Presheaf, Y: Presheaf, rng: random.Random) -> PresheafMap | None:
    """A random natural transformation X -> Y, or None if sampling fails."""
    cat = X.cat
    if any(X.carriers[c] > 0 and Y.carriers[c] == 0 for c in range(cat.n_objects())):
        return None
    for _ in range(DEFAULT_TRIES):
        comp = tuple(
            tuple(rng.randrange(Y.carriers[c]) for _ in range(X.carriers[c]))
            for c in range(cat.n_objects())
        )
        m = PresheafMap(X, Y, comp)
        if _natural(m):
            return m
    return None


def _natural(m: PresheafMap) -> bool:
    cat = m.dom.cat
    for u in range(cat.n_morphisms()):
        c, cp = cat.dst[u], cat.src[u]
        for x in range(m.dom.carriers[c]):
            if m.comp[cp][m.dom.act(x, u)] != m.cod.act(m.comp[c][x], u):
                return False
    return True


def random_subobject(X: Presheaf, rng: random.Random) -> PresheafMap:
    """A random restriction-closed subobject of X (closure of a random seed)."""
    seed = [
        frozenset(x for x in range(X.carriers[c]) if rng.random() < 0.5)
        for c in range(X.cat.n_objects())
    ]
    return sub_presheaf(X, restriction_closure(X, seed))


def random_family(Y: Presheaf, rng: random.Random, bound: int) -> PresheafMap:
    """A random family X -> Y with all fibers of size < bound.

    Families over Y correspond to presheaves on the category of elements of
    Y; drawing one there guarantees naturality by construction.
    """
    elcat, labels = elements_category(Y)
    F = random_presheaf(elcat, rng, max_card=bound - 1)
    offsets = {}
    totals = [0] * Y.cat.n_objects()
    for k, (c, y) in enumerate(labels):
        offsets[(c, y)] = totals[c]
        totals[c] += F.carriers[k]
    label_pos = {lab: k for k, lab in enumerate(labels)}

    elems = [
        [
            (y, j)
            for y in range(Y.carriers[c])
            for j in range(F.carriers[label_pos[(c, y)]])
        ]
        for c in range(Y.cat.n_objects())
    ]
    index = [{e: i for i, e in enumerate(row)} for row in elems]

    def rest_for(u, i):
        cat = Y.cat
        c, cp = cat.dst[u], cat.src[u]
        y, j = elems[c][i]
        yu = Y.act(y, u)
        # the element-category morphism (cp, yu) -> (c, y) induced by u
        if cat.is_identity(u):
            return index[cp][(yu, j)]
        el_mor = elcat.morphism_index(
            f"{cat.morphisms[u]}@{cat.objects[c]}:{y}"
        )
        return index[cp][(yu, F.act(j, el_mor))]

    X = make_presheaf(Y.cat, (len(row) for row in elems), rest_for)
    proj = make_map(X, Y, lambda c, i: elems[c][i][0])
    return proj


def random_epi_onto(B: Presheaf, rng: random.Random, max_extra: int = 2) -> PresheafMap | None:
    """A componentwise-surjective map onto B from a randomly fattened domain."""
    fam = random_family(B, rng, bound=max_extra + 1)
    # ensure surjectivity by gluing in a section: take the coproduct-like
    # fattening X ⊔ B -> B; carriers stay canonical via direct construction
    X = fam.dom
    cat = B.cat
    elems = [
        [(0, x) for x in range(X.carriers[c])] + [(1, y) for y in range(B.carriers[c])]
        for c in range(cat.n_objects())
    ]
    index = [{e: i for i, e in enumerate(row)} for row in elems]

    def rest_for(u, i):
        c, cp = cat.dst[u], cat.src[u]
        tag, v = elems[c][i]
        if tag == 0:
            return index[cp][(0, X.act(v, u))]
        return index[cp][(1, B.act(v, u))]

    D = make_presheaf(cat, (len(row) for row in elems), rest_for)
    epi = make_map(
        D,
        B,
        lambda c, i: fam.comp[c][elems[c][i][1]] if elems[c][i][0] == 0 else elems[c][i][1],
    )
    return epi if epi.is_epi() else None


def family_isos(
    f: PresheafMap,
    g: PresheafMap,
    fixed: dict | None = None,
    limit: int = 64,
) -> list[PresheafMap]:
    """Natural isomorphisms dom(f) -> dom(g) over the shared base.

    Enumerated by backtracking over fibers in (object, base-element) order.
    ``fixed`` optionally pins values: a map (c, x) -> image element that
    every returned iso must respect. At most ``limit`` are returned.
    """
    if f.cod != g.cod:
        return []
    X, Z, Y = f.dom, g.dom, f.cod
    cat = X.cat
    fixed = fixed or {}
    f_fibers = [
        [
            [x for x in range(X.carriers[c]) if f.comp[c][x] == y]
            for y in range(Y.carriers[c])
        ]
        for c in range(cat.n_objects())
    ]
    g_fibers = [
        [
            [z for z in range(Z.carriers[c]) if g.comp[c][z] == y]
            for y in range(Y.carriers[c])
        ]
        for c in range(cat.n_objects())
    ]
    slots = [(c, y) for c in range(cat.n_objects()) for y in range(Y.carriers[c])]
    out: list[PresheafMap] = []
    assign: dict[tuple[int, int], dict[int, int]] = {}

    def natural_so_far() -> bool:
        for u in range(cat.n_morphisms()):
            c, cp = cat.dst[u], cat.src[u]
            for (cc, y), table in assign.items():
                if cc != c:
                    continue
                if (cp, Y.act(y, u)) not in assign:
                    continue
                lower = assign[(cp, Y.act(y, u))]
                for x, zx in table.items():
                    if lower[X.act(x, u)] != Z.act(zx, u):
                        return False
        return True

    def backtrack(k):
        if len(out) >= limit:
            return
        if k == len(slots):
            comp = [[0] * X.carriers[c] for c in range(cat.n_objects())]
            for (c, _y), table in assign.items():
                for x, zx in table.items():
                    comp[c][x] = zx
            out.append(PresheafMap(X, Z, tuple(tuple(row) for row in comp)))
            return
        c, y = slots[k]
        src_fib, dst_fib = f_fibers[c][y], g_fibers[c][y]
        if len(src_fib) != len(dst_fib):
            return
        for perm in itertools.permutations(dst_fib):
            table = dict(zip(src_fib, perm))
            if any(
                (c, x) in fixed and table[x] != fixed[(c, x)] for x in src_fib
            ):
                continue
            assign[(c, y)] = table
            if natural_so_far():
                backtrack(k + 1)
            del assign[(c, y)]
            if len(out) >= limit:
                return

    backtrack(0)
    return out


def family_automorphisms(proj: PresheafMap, limit: int = 64) -> list[PresheafMap]:
    """Natural automorphisms of the domain over the base (fiberwise bijections)."""
    return family_isos(proj, proj, limit=limit)


def random_family_automorphism(proj: PresheafMap, rng: random.Random) -> PresheafMap:
    autos = family_automorphisms(proj)
    return autos[rng.randrange(len(autos))]
