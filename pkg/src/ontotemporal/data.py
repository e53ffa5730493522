"""Temporal quadruples, the ontology-view graph, snapshots and subgraphs.

On-disk layout of a dataset directory::

    train.txt valid.txt test.txt   s<TAB>r<TAB>o<TAB>t   (integer ids)
    stat.txt                       entity_count<TAB>relation_count
    ontology.txt                   ec<TAB>r_O<TAB>c      (c >= entity_count)
    ontology_names.txt             id<TAB>label          (optional)

Raw timestamps may be any integers; they are ranked into contiguous indices.
"""
from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

SPLITS = ("train", "valid", "test")

# half-open [lo, hi); the labels keep the closed-looking form used in reports
BUCKETS = (
    (0, 10, "[0,10]"),
    (10, 20, "[10,20]"),
    (20, 30, "[20,30]"),
    (30, 40, "[30,40]"),
    (40, 50, "[40,50]"),
    (50, 100, "[50,100]"),
    (100, None, "[100,max]"),
)
BUCKET_LABELS = tuple(b[2] for b in BUCKETS)


class DataError(ValueError):
    pass


class Quadruple(NamedTuple):
    s: int
    r: int
    o: int
    t: int


def parse_quadruple(line: str) -> Quadruple:
    parts = line.rstrip("\n").split("\t")
    if len(parts) < 4:
        raise DataError(f"expected 4 tab-separated fields, got {line!r}")
    try:
        s, r, o, t = (int(p) for p in parts[:4])
    except ValueError:
        raise DataError(f"non-integer token in {line!r}") from None
    return Quadruple(s, r, o, t)


@dataclass(frozen=True, eq=False)
class OntologyGraph:
    """Entities occupy node ids ``[0, E)`` and concepts ``[E, E + C)``.

    ``facts`` is an (n, 3) int array of ``(ec, r_O, c)``.  After inverse
    augmentation the relation space doubles and ``base_relations`` keeps the
    original count, which identifies the non-inverse facts.  Subgraphs share
    the global id space and record their reached ``nodes``.
    """

    num_entities: int
    num_concepts: int
    num_relations: int
    facts: np.ndarray
    base_relations: int = -1
    augmented: bool = False
    nodes: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.base_relations < 0:
            object.__setattr__(self, "base_relations", self.num_relations)

    @property
    def num_nodes(self) -> int:
        return self.num_entities + self.num_concepts

    @cached_property
    def in_degree(self) -> np.ndarray:
        return np.bincount(self.facts[:, 2], minlength=self.num_nodes).astype(np.int64)

    @cached_property
    def original_facts(self) -> np.ndarray:
        return self.facts[self.facts[:, 1] < self.base_relations]

    @cached_property
    def fingerprint(self) -> str:
        h = hashlib.sha1(np.ascontiguousarray(self.facts, dtype=np.int64).tobytes())
        h.update(f"{self.num_entities}/{self.num_concepts}/{self.num_relations}".encode())
        return h.hexdigest()

    @cached_property
    def neighbors(self) -> list[np.ndarray]:
        """Undirected adjacency lists (sorted, unique)."""
        if len(self.facts) == 0:
            return [np.empty(0, dtype=np.int64) for _ in range(self.num_nodes)]
        a = np.concatenate([self.facts[:, 0], self.facts[:, 2]])
        b = np.concatenate([self.facts[:, 2], self.facts[:, 0]])
        order = np.lexsort((b, a))
        a, b = a[order], b[order]
        bounds = np.searchsorted(a, np.arange(self.num_nodes + 1))
        return [np.unique(b[bounds[i] : bounds[i + 1]]) for i in range(self.num_nodes)]


@dataclass(frozen=True, eq=False)
class Snapshot:
    t: int
    facts: np.ndarray  # (n, 4)

    @cached_property
    def adjacency(self) -> tuple[dict, dict]:
        """``(out, inc)``: ``out[s]`` lists ``(r, o)``, ``inc[o]`` lists ``(r, s)``."""
        out: dict[int, list] = {}
        inc: dict[int, list] = {}
        for s, r, o, _ in self.facts.tolist():
            out.setdefault(s, []).append((r, o))
            inc.setdefault(o, []).append((r, s))
        return out, inc

    def __len__(self) -> int:
        return len(self.facts)


@dataclass(frozen=True, eq=False)
class DatasetBundle:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    entity_count: int
    relation_count: int
    timestamp_count: int
    ontology: OntologyGraph
    train_degree: np.ndarray
    base_relation_count: int = -1
    augmented: bool = False
    raw_timestamps: Optional[np.ndarray] = None
    names: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.base_relation_count < 0:
            object.__setattr__(self, "base_relation_count", self.relation_count)

    def split(self, name: str) -> np.ndarray:
        if name == "all":
            return np.concatenate([self.train, self.valid, self.test])
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    @cached_property
    def all_snapshots(self) -> list[Snapshot]:
        """One snapshot per timestamp index ``0..T-1`` over every split."""
        return _partition(self.split("all"), 0, self.timestamp_count - 1)


def _read_lines(path: Path) -> list[str]:
    if not path.exists():
        raise DataError(f"missing file {path}")
    return [ln for ln in path.read_text().splitlines() if ln.strip()]


def _read_int_rows(path: Path, width: int) -> np.ndarray:
    rows = []
    for ln in _read_lines(path):
        parts = ln.split("\t")
        if len(parts) < width:
            raise DataError(f"{path.name}: expected {width} fields in {ln!r}")
        try:
            rows.append([int(p) for p in parts[:width]])
        except ValueError:
            raise DataError(f"{path.name}: non-integer token in {ln!r}") from None
    return np.array(rows, dtype=np.int64).reshape(-1, width)


def load_dataset(directory) -> DatasetBundle:
    directory = Path(directory)
    stat = _read_int_rows(directory / "stat.txt", 2)
    if len(stat) != 1:
        raise DataError("stat.txt must hold exactly one line")
    n_ent, n_rel = (int(x) for x in stat[0])

    splits = {}
    for name in SPLITS:
        arr = _read_int_rows(directory / f"{name}.txt", 4)
        if len(arr) == 0:
            raise DataError(f"empty split {name}")
        ents = arr[:, [0, 2]]
        if ents.min() < 0 or ents.max() >= n_ent:
            raise DataError(f"{name}.txt: entity id out of range [0, {n_ent})")
        if arr[:, 1].min() < 0 or arr[:, 1].max() >= n_rel:
            raise DataError(f"{name}.txt: relation id out of range [0, {n_rel})")
        splits[name] = arr

    raw_t = np.unique(np.concatenate([splits[n][:, 3] for n in SPLITS]))
    for name in SPLITS:
        splits[name][:, 3] = np.searchsorted(raw_t, splits[name][:, 3])
    if not (splits["train"][:, 3].max() < splits["valid"][:, 3].min()
            and splits["valid"][:, 3].max() < splits["test"][:, 3].min()):
        raise DataError("valid timestamps must follow train, and test must follow valid")

    ontology = load_ontology(directory / "ontology.txt", n_ent)
    names = {}
    name_file = directory / "ontology_names.txt"
    if name_file.exists():
        for ln in _read_lines(name_file):
            key, _, label = ln.partition("\t")
            names[int(key)] = label

    return DatasetBundle(
        train=splits["train"],
        valid=splits["valid"],
        test=splits["test"],
        entity_count=n_ent,
        relation_count=n_rel,
        timestamp_count=len(raw_t),
        ontology=ontology,
        train_degree=_degrees(splits["train"], n_ent),
        raw_timestamps=raw_t,
        names=names,
    )


def load_ontology(path: Path, num_entities: int) -> OntologyGraph:
    facts = _read_int_rows(path, 3)
    if len(facts) == 0:
        return OntologyGraph(num_entities, 0, 0, facts)
    if facts.min() < 0:
        raise DataError("ontology.txt: negative id")
    if facts[:, 2].min() < num_entities:
        raise DataError("ontology.txt: fact target must be a concept id (>= entity_count)")
    num_concepts = int(facts[:, 2].max()) + 1 - num_entities
    num_concepts = max(num_concepts, int(facts[:, 0].max()) + 1 - num_entities)
    num_rel = int(facts[:, 1].max()) + 1
    return OntologyGraph(num_entities, num_concepts, num_rel, facts)


def _degrees(quads: np.ndarray, n_ent: int) -> np.ndarray:
    return (np.bincount(quads[:, 0], minlength=n_ent) + np.bincount(quads[:, 2], minlength=n_ent)).astype(np.int64)


def with_train(bundle: DatasetBundle, train: np.ndarray) -> DatasetBundle:
    """Copy of a raw bundle with a replaced training split (degrees recomputed)."""
    if bundle.augmented:
        raise DataError("replace the training split before inverse augmentation")
    return replace(bundle, train=train, train_degree=_degrees(train, bundle.entity_count))


def save_dataset(bundle: DatasetBundle, directory) -> None:
    if bundle.augmented:
        raise DataError("only raw (non-augmented) bundles can be serialized")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in SPLITS:
        _write_rows(directory / f"{name}.txt", bundle.split(name))
    (directory / "stat.txt").write_text(f"{bundle.entity_count}\t{bundle.relation_count}\n")
    _write_rows(directory / "ontology.txt", bundle.ontology.facts)
    if bundle.names:
        lines = "".join(f"{k}\t{v}\n" for k, v in sorted(bundle.names.items()))
        (directory / "ontology_names.txt").write_text(lines)


def _write_rows(path: Path, rows: np.ndarray) -> None:
    path.write_text("".join("\t".join(str(int(x)) for x in row) + "\n" for row in rows))


def augment_ontology(g: OntologyGraph) -> OntologyGraph:
    if g.augmented:
        raise DataError("ontology already augmented with inverse edges")
    inv = g.facts[:, [2, 1, 0]].copy()
    inv[:, 1] += g.num_relations
    return OntologyGraph(
        g.num_entities,
        g.num_concepts,
        2 * g.num_relations,
        np.concatenate([g.facts, inv]),
        base_relations=g.num_relations,
        augmented=True,
    )


def _inverse_quads(q: np.ndarray, n_rel: int) -> np.ndarray:
    inv = q[:, [2, 1, 0, 3]].copy()
    inv[:, 1] += n_rel
    return np.concatenate([q, inv])


def augment_inverse(bundle: DatasetBundle) -> DatasetBundle:
    if bundle.augmented:
        raise DataError("bundle already augmented with inverse facts")
    R = bundle.relation_count
    return replace(
        bundle,
        train=_inverse_quads(bundle.train, R),
        valid=_inverse_quads(bundle.valid, R),
        test=_inverse_quads(bundle.test, R),
        relation_count=2 * R,
        base_relation_count=R,
        ontology=augment_ontology(bundle.ontology),
        augmented=True,
    )


def _partition(quads: np.ndarray, t_lo: int, t_hi: int) -> list[Snapshot]:
    if t_hi < t_lo:
        return []
    order = np.argsort(quads[:, 3], kind="stable")
    quads = quads[order]
    bounds = np.searchsorted(quads[:, 3], np.arange(t_lo, t_hi + 2))
    return [Snapshot(t_lo + i, quads[bounds[i] : bounds[i + 1]]) for i in range(t_hi - t_lo + 1)]


def snapshots(bundle: DatasetBundle, split: str) -> list[Snapshot]:
    """Snapshots covering every timestamp from the split's first to its last.

    Timestamps without facts give empty snapshots so positions stay aligned.
    """
    if not bundle.augmented:
        raise DataError("snapshots expects an inverse-augmented bundle")
    quads = bundle.split(split)
    if len(quads) == 0:
        return []
    return _partition(quads, int(quads[:, 3].min()), int(quads[:, 3].max()))


def nhop_subgraph(g: OntologyGraph, seed: int, hops: Optional[int]) -> OntologyGraph:
    """Undirected BFS from ``seed`` up to ``hops`` steps (``None``: no limit).

    Keeps every fact whose two endpoints were both reached.
    """
    if not 0 <= seed < g.num_entities:
        raise DataError(f"seed {seed} is not an entity id")
    if hops is not None and hops < 0:
        raise ValueError("hop count must be non-negative")
    nbrs = g.neighbors
    depth = {seed: 0}
    queue = deque([seed])
    while queue:
        u = queue.popleft()
        if hops is not None and depth[u] >= hops:
            continue
        for v in nbrs[u].tolist():
            if v not in depth:
                depth[v] = depth[u] + 1
                queue.append(v)
    nodes = np.array(sorted(depth), dtype=np.int64)
    reached = np.zeros(g.num_nodes, dtype=bool)
    reached[nodes] = True
    if len(g.facts):
        keep = reached[g.facts[:, 0]] & reached[g.facts[:, 2]]
        facts = g.facts[keep]
    else:
        facts = g.facts
    return replace(g, facts=facts, nodes=nodes)


def degree_bucket(bundle: DatasetBundle, entity: int) -> str:
    return bucket_of(int(bundle.train_degree[entity]))


def bucket_of(degree: int) -> str:
    for lo, hi, label in BUCKETS:
        if degree >= lo and (hi is None or degree < hi):
            return label
    raise ValueError(f"negative degree {degree}")
