"""Finite categories, functors, slices, and terminal-object adjunction.

A ``FiniteCategory`` stores objects and morphisms as dense integer indices
over the declared string ids; the composition table is total on composable
pairs and validated exhaustively. Identities are synthesized (index block
before the declared morphisms, one per object in object order), so every
enumeration order downstream is fixed by the declaration order of the input.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

from .errors import ValidationError


@dataclass(frozen=True)
class FiniteCategory:
    objects: tuple[str, ...]
    morphisms: tuple[str, ...]
    src: tuple[int, ...]
    dst: tuple[int, ...]
    identity: tuple[int, ...]
    # comp[g][f] = index of g∘f, or -1 when dst(f) != src(g)
    comp: tuple[tuple[int, ...], ...]

    def n_objects(self) -> int:
        return len(self.objects)

    def n_morphisms(self) -> int:
        return len(self.morphisms)

    def object_index(self, name: str) -> int:
        try:
            return self.objects.index(name)
        except ValueError:
            raise ValidationError(f"unknown object id {name!r}") from None

    def morphism_index(self, name: str) -> int:
        try:
            return self.morphisms.index(name)
        except ValueError:
            raise ValidationError(f"unknown morphism id {name!r}") from None

    def compose(self, g: int, f: int) -> int:
        """Composite g∘f; requires dst(f) == src(g)."""
        gf = self.comp[g][f]
        if gf < 0:
            raise ValidationError(
                f"morphisms not composable: {self.morphisms[g]}∘{self.morphisms[f]}"
            )
        return gf

    def is_identity(self, m: int) -> bool:
        return self.identity[self.src[m]] == m

    def hom_into(self, c: int) -> tuple[int, ...]:
        return tuple(m for m in range(len(self.morphisms)) if self.dst[m] == c)

    def hom(self, a: int, b: int) -> tuple[int, ...]:
        return tuple(
            m for m in range(len(self.morphisms)) if self.src[m] == a and self.dst[m] == b
        )

    def describe_morphism(self, m: int) -> str:
        return (
            f"{self.morphisms[m]}: {self.objects[self.src[m]]}"
            f" -> {self.objects[self.dst[m]]}"
        )


def _check_laws(cat: FiniteCategory) -> None:
    n = cat.n_morphisms()
    for f in range(n):
        i_dst = cat.identity[cat.dst[f]]
        i_src = cat.identity[cat.src[f]]
        if cat.comp[i_dst][f] != f:
            raise ValidationError(
                f"left unit law fails: id∘{cat.morphisms[f]} != {cat.morphisms[f]}",
                witness=(cat.morphisms[i_dst], cat.morphisms[f]),
            )
        if cat.comp[f][i_src] != f:
            raise ValidationError(
                f"right unit law fails: {cat.morphisms[f]}∘id != {cat.morphisms[f]}",
                witness=(cat.morphisms[f], cat.morphisms[i_src]),
            )
    for g in range(n):
        for f in range(n):
            defined = cat.dst[f] == cat.src[g]
            gf = cat.comp[g][f]
            if defined and gf < 0:
                raise ValidationError(
                    f"missing composite {cat.morphisms[g]}∘{cat.morphisms[f]}",
                    witness=(cat.morphisms[g], cat.morphisms[f]),
                )
            if not defined and gf >= 0:
                raise ValidationError(
                    f"composite declared for non-composable pair "
                    f"{cat.morphisms[g]}∘{cat.morphisms[f]}",
                    witness=(cat.morphisms[g], cat.morphisms[f]),
                )
            if defined:
                if cat.src[gf] != cat.src[f] or cat.dst[gf] != cat.dst[g]:
                    raise ValidationError(
                        f"composite {cat.morphisms[gf]} of {cat.morphisms[g]}∘"
                        f"{cat.morphisms[f]} has wrong endpoints",
                        witness=(cat.morphisms[g], cat.morphisms[f], cat.morphisms[gf]),
                    )
    for h in range(n):
        for g in range(n):
            if cat.dst[h] != cat.src[g]:
                continue
            gh = cat.comp[g][h]
            for f in range(n):
                if cat.dst[g] != cat.src[f]:
                    continue
                if cat.comp[f][gh] != cat.comp[cat.comp[f][g]][h]:
                    raise ValidationError(
                        "associativity fails on triple "
                        f"({cat.morphisms[f]}, {cat.morphisms[g]}, {cat.morphisms[h]})",
                        witness=(cat.morphisms[f], cat.morphisms[g], cat.morphisms[h]),
                    )


def validate_category(raw: dict) -> FiniteCategory:
    """Build and validate a category from its raw description.

    ``raw`` has keys ``objects`` (list of ids), ``morphisms`` (list of
    ``{"id","src","dst"}``), and ``compose`` (list of ``[g, f, gf]`` for
    non-identity composable pairs). Identities are implicit, named
    ``id_<obj>``, and all unit composites are filled in automatically.
    """
    objects = tuple(raw.get("objects", ()))
    if len(set(objects)) != len(objects):
        raise ValidationError("object ids are not distinct")
    decl = raw.get("morphisms", ())
    id_names = tuple(f"id_{o}" for o in objects)
    for entry in decl:
        if entry["id"] in id_names:
            raise ValidationError(f"morphism id {entry['id']!r} collides with an identity")
    names = list(id_names) + [e["id"] for e in decl]
    if len(set(names)) != len(names):
        raise ValidationError("morphism ids are not distinct")
    obj_idx = {o: i for i, o in enumerate(objects)}
    src = list(range(len(objects)))
    dst = list(range(len(objects)))
    for e in decl:
        if e["src"] not in obj_idx or e["dst"] not in obj_idx:
            raise ValidationError(f"morphism {e['id']!r} references unknown object")
        src.append(obj_idx[e["src"]])
        dst.append(obj_idx[e["dst"]])
    mor_idx = {m: i for i, m in enumerate(names)}
    n = len(names)
    comp = [[-1] * n for _ in range(n)]
    for f in range(n):
        comp[mor_idx[id_names[dst[f]]]][f] = f
        comp[f][mor_idx[id_names[src[f]]]] = f
    for g_name, f_name, gf_name in raw.get("compose", ()):
        for nm in (g_name, f_name, gf_name):
            if nm not in mor_idx:
                raise ValidationError(f"compose entry references unknown morphism {nm!r}")
        g, f, gf = mor_idx[g_name], mor_idx[f_name], mor_idx[gf_name]
        if comp[g][f] not in (-1, gf):
            raise ValidationError(
                f"conflicting composites declared for {g_name}∘{f_name}",
                witness=(g_name, f_name),
            )
        comp[g][f] = gf
    cat = FiniteCategory(
        objects=objects,
        morphisms=tuple(names),
        src=tuple(src),
        dst=tuple(dst),
        identity=tuple(mor_idx[nm] for nm in id_names),
        comp=tuple(tuple(row) for row in comp),
    )
    _check_laws(cat)
    return cat


def make_category(objects, morphisms, compose) -> FiniteCategory:
    """Convenience wrapper over :func:`validate_category` for code-built data."""
    return validate_category(
        {
            "objects": list(objects),
            "morphisms": [{"id": m, "src": s, "dst": d} for (m, s, d) in morphisms],
            "compose": [list(entry) for entry in compose],
        }
    )


@dataclass(frozen=True)
class FunctorData:
    dom: FiniteCategory
    cod: FiniteCategory
    obj_map: tuple[int, ...]
    mor_map: tuple[int, ...]

    def validate(self) -> None:
        for m in range(self.dom.n_morphisms()):
            fm = self.mor_map[m]
            if self.cod.src[fm] != self.obj_map[self.dom.src[m]] or (
                self.cod.dst[fm] != self.obj_map[self.dom.dst[m]]
            ):
                raise ValidationError(
                    f"functor does not preserve endpoints of {self.dom.morphisms[m]}"
                )
        for o in range(self.dom.n_objects()):
            if self.mor_map[self.dom.identity[o]] != self.cod.identity[self.obj_map[o]]:
                raise ValidationError(
                    f"functor does not preserve identity of {self.dom.objects[o]}"
                )
        for g in range(self.dom.n_morphisms()):
            for f in range(self.dom.n_morphisms()):
                if self.dom.dst[f] != self.dom.src[g]:
                    continue
                if self.mor_map[self.dom.comp[g][f]] != self.cod.comp[self.mor_map[g]][
                    self.mor_map[f]
                ]:
                    raise ValidationError(
                        "functor does not preserve composite "
                        f"{self.dom.morphisms[g]}∘{self.dom.morphisms[f]}"
                    )


@lru_cache(maxsize=None)
def slice_category(cat: FiniteCategory, c: int) -> tuple[FiniteCategory, FunctorData]:
    """The slice at object ``c`` plus the projection functor.

    Slice objects are the morphisms into ``c`` in morphism-index order;
    a slice morphism (u∘w) -> (u) is a morphism w of the base with
    dst(w) = src(u), i.e. a commuting triangle over c.
    """
    if not 0 <= c < cat.n_objects():
        raise ValidationError(f"unknown object index {c}")
    into = cat.hom_into(c)
    pos = {u: i for i, u in enumerate(into)}
    obj_names = tuple(cat.morphisms[u] for u in into)
    mors = []  # (name, src slice obj pos, dst slice obj pos, base morphism w)
    for i, u in enumerate(into):
        for w in range(cat.n_morphisms()):
            if cat.dst[w] != cat.src[u]:
                continue
            uw = cat.comp[u][w]
            mors.append(
                (f"{cat.morphisms[w]}@{cat.morphisms[u]}", pos[uw], i, w, u)
            )
    mor_key = {(w, u_pos): k for k, (_, _, u_pos, w, _) in enumerate(mors)}
    n = len(mors)
    src = tuple(m[1] for m in mors)
    dst = tuple(m[2] for m in mors)
    identity = tuple(
        mor_key[(cat.identity[cat.src[u]], pos[u])] for u in into
    )
    comp = [[-1] * n for _ in range(n)]
    for g_i, (_, g_src, g_dst, g_w, g_u) in enumerate(mors):
        for f_i, (_, f_src, f_dst, f_w, f_u) in enumerate(mors):
            if f_dst != g_src:
                continue
            comp[g_i][f_i] = mor_key[(cat.comp[g_w][f_w], g_dst)]
    slice_cat = FiniteCategory(
        objects=obj_names,
        morphisms=tuple(m[0] for m in mors),
        src=src,
        dst=dst,
        identity=identity,
        comp=tuple(tuple(row) for row in comp),
    )
    _check_laws(slice_cat)
    projection = FunctorData(
        dom=slice_cat,
        cod=cat,
        obj_map=tuple(cat.src[u] for u in into),
        mor_map=tuple(m[3] for m in mors),
    )
    projection.validate()
    return slice_cat, projection


def _fresh(name: str, taken) -> str:
    while name in taken:
        name += "'"
    return name


def adjoin_terminal(cat: FiniteCategory) -> FiniteCategory:
    """Freely adjoin a terminal object: one new morphism x -> ⊤ per object x."""
    top = _fresh("⊤", set(cat.objects))
    bang_names = [_fresh(f"!{o}", set(cat.morphisms)) for o in cat.objects]
    decl = []
    for m in range(cat.n_morphisms()):
        if not cat.is_identity(m):
            decl.append(
                (cat.morphisms[m], cat.objects[cat.src[m]], cat.objects[cat.dst[m]])
            )
    for o, bang in zip(cat.objects, bang_names):
        decl.append((bang, o, top))
    compose = []
    for g in range(cat.n_morphisms()):
        for f in range(cat.n_morphisms()):
            if cat.dst[f] == cat.src[g]:
                gf = cat.comp[g][f]
                if not cat.is_identity(g) and not cat.is_identity(f):
                    names = (cat.morphisms[g], cat.morphisms[f])
                    gf_name = (
                        f"id_{cat.objects[cat.src[gf]]}"
                        if cat.is_identity(gf)
                        else cat.morphisms[gf]
                    )
                    compose.append([names[0], names[1], gf_name])
    for f in range(cat.n_morphisms()):
        if not cat.is_identity(f):
            compose.append(
                [bang_names[cat.dst[f]], cat.morphisms[f], bang_names[cat.src[f]]]
            )
    return make_category(list(cat.objects) + [top], decl, compose)


# Small standing corpus used throughout the test-suite and the CLI examples.

def terminal_category() -> FiniteCategory:
    return make_category(["*"], [], [])


def interval_category() -> FiniteCategory:
    return make_category(["0", "1"], [("u", "0", "1")], [])


def parallel_pair_category() -> FiniteCategory:
    return make_category(["a", "b"], [("u", "a", "b"), ("v", "a", "b")], [])


def span_category() -> FiniteCategory:
    return make_category(
        ["a", "b", "c"], [("f", "a", "b"), ("g", "a", "c")], []
    )


def square_category() -> FiniteCategory:
    return make_category(
        ["a", "b", "c", "d"],
        [
            ("u", "a", "b"),
            ("v", "a", "c"),
            ("f", "b", "d"),
            ("g", "c", "d"),
            ("w", "a", "d"),
        ],
        [["f", "u", "w"], ["g", "v", "w"]],
    )
