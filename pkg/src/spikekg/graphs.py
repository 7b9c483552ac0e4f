"""Knowledge-graph data model: dictionaries, triple splits, neighborhood index,
TSV io, and the bundled dataset generators."""

from __future__ import annotations

import importlib.resources
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParseError, VocabularyError

Triple = tuple[int, int, int]


class Vocab:
    """Bijection between surface strings and dense 0-based ids.

    Case-sensitive. Once frozen, lookups of unknown surfaces raise
    VocabularyError instead of minting new ids.
    """

    def __init__(self, surfaces=()):
        self._surfaces: list[str] = []
        self._ids: dict[str, int] = {}
        self.frozen = False
        for s in surfaces:
            self.add(s)

    def add(self, surface: str) -> int:
        try:
            return self._ids[surface]
        except KeyError:
            if self.frozen:
                raise VocabularyError(f"unknown surface form {surface!r} (dictionary is frozen)")
            i = len(self._surfaces)
            self._surfaces.append(surface)
            self._ids[surface] = i
            return i

    def id_of(self, surface: str) -> int:
        try:
            return self._ids[surface]
        except KeyError:
            raise VocabularyError(f"unknown surface form {surface!r}") from None

    def surface_of(self, i: int) -> str:
        return self._surfaces[i]

    def freeze(self) -> "Vocab":
        self.frozen = True
        return self

    def __len__(self) -> int:
        return len(self._surfaces)

    def __contains__(self, surface: str) -> bool:
        return surface in self._ids

    def surfaces(self) -> list[str]:
        return list(self._surfaces)


def load_tsv(path, entities: Vocab | None = None, relations: Vocab | None = None):
    """Read one split of `subject<TAB>predicate<TAB>object` lines.

    Ids are assigned in first-encounter order. If frozen dictionaries are
    passed in, unknown surface forms raise VocabularyError.

    Returns (triples, entities, relations) with triples as an (n, 3) int64
    array of (subject, predicate, object) ids.
    """
    entities = Vocab() if entities is None else entities
    relations = Vocab() if relations is None else relations
    rows = []
    seen = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(path, lineno, f"expected 3 tab-separated fields, got {len(parts)}")
            s, p, o = parts
            t = (entities.add(s), relations.add(p), entities.add(o))
            if t in seen:
                raise ParseError(path, lineno, "duplicate triple within split")
            seen.add(t)
            rows.append(t)
    triples = np.asarray(rows, dtype=np.int64).reshape(len(rows), 3)
    return triples, entities, relations


def write_tsv(path, triples: np.ndarray, entities: Vocab, relations: Vocab) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s, p, o in np.asarray(triples):
            f.write(f"{entities.surface_of(s)}\t{relations.surface_of(p)}\t{entities.surface_of(o)}\n")


def _load_dict(path) -> Vocab:
    v = Vocab()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(path, lineno, "expected `id<TAB>surface`")
            i, surface = parts
            if int(i) != v.add(surface):
                raise ParseError(path, lineno, "dictionary ids must be dense and in order")
    return v


def _write_dict(path, vocab: Vocab) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for i, s in enumerate(vocab.surfaces()):
            f.write(f"{i}\t{s}\n")


def build_neighbor_index(train: np.ndarray) -> dict[tuple[int, int], np.ndarray]:
    """Outgoing neighborhoods: (i, p) -> sorted distinct objects j with
    (i, p, j) in the training split. Keys with no outgoing edge are absent."""
    index: dict[tuple[int, int], set[int]] = {}
    for s, p, o in np.asarray(train):
        index.setdefault((int(s), int(p)), set()).add(int(o))
    return {k: np.array(sorted(v), dtype=np.int64) for k, v in sorted(index.items())}


@dataclass
class KnowledgeGraph:
    """Immutable after construction; safe to share across threads."""

    entities: Vocab
    relations: Vocab
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    neighbor_index: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        self.entities.freeze()
        self.relations.freeze()
        if not self.neighbor_index:
            self.neighbor_index = build_neighbor_index(self.train)

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    @property
    def n_triples(self) -> int:
        return len(self.train) + len(self.valid) + len(self.test)

    def split(self, name: str) -> np.ndarray:
        try:
            return {"train": self.train, "valid": self.valid, "test": self.test}[name]
        except KeyError:
            raise ConfigError(f"unknown split {name!r}") from None

    def all_triples(self) -> set[Triple]:
        """Union of all splits, used as the filter set during ranking."""
        out = set()
        for arr in (self.train, self.valid, self.test):
            out.update(map(tuple, arr.tolist()))
        return out

    def inverse_index(self) -> dict[tuple[int, int], np.ndarray]:
        """Incoming neighborhoods on train: (o, p) -> sorted subjects."""
        flipped = self.train[:, [2, 1, 0]]
        return build_neighbor_index(flipped)

    def stats(self) -> tuple[int, int, int, int, int]:
        return (self.n_entities, self.n_relations, len(self.train), len(self.valid), len(self.test))

    def write_dir(self, out_dir) -> None:
        os.makedirs(out_dir, exist_ok=True)
        for split in ("train", "valid", "test"):
            write_tsv(os.path.join(out_dir, f"{split}.tsv"), self.split(split), self.entities, self.relations)
        _write_dict(os.path.join(out_dir, "entities.dict"), self.entities)
        _write_dict(os.path.join(out_dir, "relations.dict"), self.relations)


def load_dir(path, name: str = "") -> KnowledgeGraph:
    """Load a dataset directory: {train,valid,test}.tsv plus optional
    entities.dict / relations.dict. Standard .txt split files are accepted
    as a fallback so published benchmark files can be dropped in unchanged.
    """
    def split_path(split):
        for ext in (".tsv", ".txt"):
            p = os.path.join(path, split + ext)
            if os.path.exists(p):
                return p
        raise FileNotFoundError(f"missing split file {split}.tsv under {path}")

    ents = rels = None
    ed, rd = os.path.join(path, "entities.dict"), os.path.join(path, "relations.dict")
    if os.path.exists(ed) and os.path.exists(rd):
        ents, rels = _load_dict(ed), _load_dict(rd)
        ents.freeze()
        rels.freeze()
    train, ents, rels = load_tsv(split_path("train"), ents, rels)
    # evaluation must never mint ids: freeze after the training split
    ents.freeze()
    rels.freeze()
    valid, _, _ = load_tsv(split_path("valid"), ents, rels)
    test, _, _ = load_tsv(split_path("test"), ents, rels)
    return KnowledgeGraph(ents, rels, train, valid, test, name=name or os.path.basename(str(path)))


# ---------------------------------------------------------------------------
# bundled dataset generators


def _split_with_coverage(triples: list[Triple], n_valid: int, n_test: int, rng: np.random.Generator):
    """Hold out n_valid + n_test triples such that every entity of a held-out
    triple still occurs in the remaining training triples."""
    triples = list(triples)
    counts: dict[int, int] = {}
    for s, _, o in triples:
        counts[s] = counts.get(s, 0) + 1
        counts[o] = counts.get(o, 0) + 1
    order = rng.permutation(len(triples))
    held = []
    taken = [False] * len(triples)
    for idx in order:
        if len(held) == n_valid + n_test:
            break
        s, p, o = triples[idx]
        need = 2 if s != o else 1  # removing (s,p,o) drops one occurrence each
        if counts[s] > 1 and counts[o] > 1 and (s != o or counts[s] > need):
            counts[s] -= 1
            counts[o] -= 1
            taken[idx] = True
            held.append(triples[idx])
    if len(held) < n_valid + n_test:
        raise ConfigError("cannot hold out the requested number of triples with full entity coverage")
    train = [t for i, t in enumerate(triples) if not taken[i]]
    return train, held[:n_valid], held[n_valid:]


_STATE_BORDERS = [
    ("schleswig-holstein", "hamburg"),
    ("schleswig-holstein", "lower-saxony"),
    ("schleswig-holstein", "mecklenburg-vorpommern"),
    ("hamburg", "lower-saxony"),
    ("lower-saxony", "bremen"),
    ("lower-saxony", "mecklenburg-vorpommern"),
    ("lower-saxony", "brandenburg"),
    ("lower-saxony", "saxony-anhalt"),
    ("lower-saxony", "thuringia"),
    ("lower-saxony", "hesse"),
    ("lower-saxony", "north-rhine-westphalia"),
    ("mecklenburg-vorpommern", "brandenburg"),
    ("brandenburg", "saxony-anhalt"),
    ("brandenburg", "saxony"),
    ("brandenburg", "berlin"),
    ("saxony-anhalt", "saxony"),
    ("saxony-anhalt", "thuringia"),
    ("saxony", "thuringia"),
    ("saxony", "bavaria"),
    ("thuringia", "hesse"),
    ("thuringia", "bavaria"),
    ("hesse", "north-rhine-westphalia"),
    ("hesse", "rhineland-palatinate"),
    ("hesse", "baden-wuerttemberg"),
    ("hesse", "bavaria"),
    ("north-rhine-westphalia", "rhineland-palatinate"),
    ("rhineland-palatinate", "baden-wuerttemberg"),
    ("rhineland-palatinate", "saarland"),
    ("bavaria", "baden-wuerttemberg"),
]

_FOREIGN_BORDERS = [
    ("schleswig-holstein", "denmark"),
    ("lower-saxony", "netherlands"),
    ("north-rhine-westphalia", "netherlands"),
    ("north-rhine-westphalia", "belgium"),
    ("rhineland-palatinate", "luxembourg"),
    ("saarland", "luxembourg"),
    ("saarland", "france"),
    ("rhineland-palatinate", "france"),
    ("baden-wuerttemberg", "france"),
    ("baden-wuerttemberg", "switzerland"),
    ("bavaria", "austria"),
    ("bavaria", "czechia"),
    ("saxony", "czechia"),
    ("saxony", "poland"),
    ("brandenburg", "poland"),
    ("mecklenburg-vorpommern", "poland"),
]

_STATES = sorted({a for a, _ in _STATE_BORDERS} | {b for _, b in _STATE_BORDERS})

_COUNTRIES = ["austria", "belgium", "czechia", "denmark", "france",
              "luxembourg", "netherlands", "poland", "switzerland"]


def gen_federal_states() -> KnowledgeGraph:
    """Geographic mini-graph: the 16 German federal states, Germany, Europe,
    and Germany's nine neighboring countries (27 entities, 2 relations,
    95/10/10 split). Deterministic.

    Held-out triples are kept inferable from the training graph: either a
    membership fact whose pattern recurs in training, or one direction of a
    border whose opposite direction stays in training."""
    rng = np.random.default_rng(20210916)
    ents = Vocab(_STATES + ["germany", "europe"] + _COUNTRIES)
    rels = Vocab(["neighborOf", "locatedIn"])
    nb, loc = rels.id_of("neighborOf"), rels.id_of("locatedIn")
    e = ents.id_of

    pool: list[Triple] = []
    for a, b in _STATE_BORDERS + _FOREIGN_BORDERS:
        pool.append((e(a), nb, e(b)))
        pool.append((e(b), nb, e(a)))
    for c in _COUNTRIES:
        pool.append((e(c), nb, e("germany")))
        pool.append((e("germany"), nb, e(c)))
        pool.append((e(c), loc, e("europe")))
    for s in _STATES:
        pool.append((e(s), loc, e("germany")))
    pool.append((e("germany"), loc, e("europe")))
    # 136 candidate facts; drop reverse directions of a seeded selection of
    # state-state borders to land at exactly 115
    drop = rng.choice(len(_STATE_BORDERS), size=len(pool) - 115, replace=False)
    dropped = {(e(_STATE_BORDERS[i][1]), nb, e(_STATE_BORDERS[i][0])) for i in drop}
    pool = [t for t in pool if t not in dropped]

    directed = set(pool)
    membership = [t for t in pool if t[1] == loc and t != (e("germany"), loc, e("europe"))]
    symmetric = [t for t in pool if t[1] == nb and (t[2], nb, t[0]) in directed]
    hold = []
    for i in rng.permutation(len(membership))[:10]:
        hold.append(membership[i])
    taken_pairs = set()
    for i in rng.permutation(len(symmetric)):
        s, _, o = symmetric[i]
        if len(hold) == 20:
            break
        if (o, s) in taken_pairs or (s, o) in taken_pairs:
            continue  # keep the reverse direction in training
        taken_pairs.add((s, o))
        hold.append(symmetric[i])
    held = set(hold)
    train = [t for t in pool if t not in held]
    order = rng.permutation(20)
    valid = [hold[i] for i in order[:10]]
    test = [hold[i] for i in order[10:]]

    ents.freeze()
    rels.freeze()
    kg = KnowledgeGraph(ents, rels,
                        np.array(train, dtype=np.int64),
                        np.array(valid, dtype=np.int64),
                        np.array(test, dtype=np.int64),
                        name="federal_states")
    seen = set(kg.train[:, 0]) | set(kg.train[:, 2])
    assert all(s in seen and o in seen for s, _, o in hold)
    return kg


def gen_small_kg(n_entities: int, n_relations: int, n_train: int, n_valid: int,
                 n_test: int, seed: int) -> KnowledgeGraph:
    """Reproducible synthetic KG with typed relational structure: entities are
    grouped into types and every relation connects one source type to one
    target type."""
    n_total = n_train + n_valid + n_test
    rng = np.random.default_rng(seed)
    n_types = max(2, min(5, n_entities // 6))

    rel_sig = []
    for r in range(n_relations):
        src = int(rng.integers(n_types))
        dst = int(rng.integers(n_types))
        rel_sig.append((src, dst))
    # only assign entities to types some relation can reach
    covered = sorted({t for sig in rel_sig for t in sig})
    types = [covered[i % len(covered)] for i in range(n_entities)]
    by_type = [[i for i in range(n_entities) if types[i] == t] for t in range(n_types)]

    capacity = 0
    for src, dst in rel_sig:
        pairs = len(by_type[src]) * len(by_type[dst])
        if src == dst:
            pairs -= len(by_type[src])  # no self-edges
        capacity += pairs
    if capacity < n_total:
        raise ConfigError(f"requested {n_total} distinct triples but only {capacity} are satisfiable")

    triples: set[Triple] = set()
    # seed coverage: every entity participates in at least one triple
    for ent in range(n_entities):
        for attempt in range(200):
            r = int(rng.integers(n_relations))
            src, dst = rel_sig[r]
            if types[ent] == src:
                o = int(rng.choice(by_type[dst]))
                if o != ent and (ent, r, o) not in triples:
                    triples.add((ent, r, o))
                    break
            elif types[ent] == dst:
                s = int(rng.choice(by_type[src]))
                if s != ent and (s, r, ent) not in triples:
                    triples.add((s, r, ent))
                    break
        else:
            raise ConfigError(f"could not connect entity {ent}; counts too tight for the type structure")
    while len(triples) < n_total:
        r = int(rng.integers(n_relations))
        src, dst = rel_sig[r]
        s = int(rng.choice(by_type[src]))
        o = int(rng.choice(by_type[dst]))
        if s != o:
            triples.add((s, r, o))

    width = len(str(n_entities - 1))
    ents = Vocab([f"e{i:0{width}d}_t{types[i]}" for i in range(n_entities)])
    rels = Vocab([f"rel{r}_t{rel_sig[r][0]}t{rel_sig[r][1]}" for r in range(n_relations)])
    ordered = sorted(triples)
    train, valid, test = _split_with_coverage(ordered, n_valid, n_test, rng)
    ents.freeze()
    rels.freeze()
    return KnowledgeGraph(ents, rels,
                          np.array(train, dtype=np.int64),
                          np.array(valid, dtype=np.int64),
                          np.array(test, dtype=np.int64),
                          name=f"synthetic_{n_entities}e_{n_relations}r")


# ---------------------------------------------------------------------------
# dataset registry

BUNDLED = {
    "countries_s1": "countries_s1",
    "federal-states": "federal_states",
    "synthetic-broodwar-like": "broodwar_like",
}

EXTERNAL = {
    "umls": "place {train,valid,test}.tsv (or the published .txt split files) under <data-root>/umls/",
    "fb15k-237": "place {train,valid,test}.tsv (or the published .txt split files) under <data-root>/fb15k-237/",
}


def bundled_data_root():
    return importlib.resources.files("spikekg").joinpath("data")


def resolve_dataset(name_or_path, data_root=None) -> KnowledgeGraph:
    """Resolve a registry name or a filesystem path to a loaded graph.

    Registry: countries_s1, federal-states, synthetic-broodwar-like (bundled);
    umls, fb15k-237 (external, looked up under `data_root`, default
    $SPIKEKG_DATA or ./data).
    """
    name = str(name_or_path)
    if os.path.isdir(name):
        return load_dir(name)
    if name in BUNDLED:
        return load_dir(str(bundled_data_root().joinpath(BUNDLED[name])), name=name)
    if name in EXTERNAL:
        root = data_root or os.environ.get("SPIKEKG_DATA", "data")
        path = os.path.join(root, name)
        if os.path.isdir(path):
            return load_dir(path, name=name)
        raise ConfigError(f"dataset {name!r} is not bundled: {EXTERNAL[name]} (looked in {path})")
    raise ConfigError(f"unknown dataset {name_or_path!r}; registry: "
                      f"{sorted(BUNDLED) + sorted(EXTERNAL)} or a directory path")
