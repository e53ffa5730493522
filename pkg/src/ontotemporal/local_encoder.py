"""Per-subject ontology subgraph encoder producing the supplementary view."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .compgcn import CompGcnStack, EdgeIndex, xavier
from .data import DataError, OntologyGraph, nhop_subgraph


def subgraph_cache_key(seed: int, hops: Optional[int]) -> tuple:
    return (int(seed), -1 if hops is None else int(hops))


@dataclass
class LocalEmbeddings:
    H_l: Tensor
    covered: np.ndarray  # sorted entity ids written by some subgraph run


@dataclass
class LocalEncoder:
    node_emb0: Tensor
    stack: CompGcnStack
    hops: Optional[int] = 2
    cache: dict = field(default_factory=dict)
    bfs_calls: int = 0
    _fingerprint: Optional[str] = None

    @classmethod
    def init(cls, rng, num_nodes: int, dim: int, num_relations: int, num_layers: int,
             hops: Optional[int] = 2, op: str = "sub") -> "LocalEncoder":
        return cls(xavier(rng, (num_nodes, dim)), CompGcnStack.init(rng, dim, num_relations, num_layers, op), hops)

    def parameters(self, prefix: str = "local") -> dict[str, Tensor]:
        out = {f"{prefix}.node_emb0": self.node_emb0}
        out.update(self.stack.parameters(f"{prefix}.gcn"))
        return out

    def clear_cache(self) -> None:
        self.cache.clear()

    def subgraph(self, g: OntologyGraph, seed: int) -> OntologyGraph:
        if self._fingerprint != g.fingerprint:
            self.cache.clear()
            self._fingerprint = g.fingerprint
        key = subgraph_cache_key(seed, self.hops)
        sg = self.cache.get(key)
        if sg is None:
            self.bfs_calls += 1
            sg = nhop_subgraph(g, seed, self.hops)
            self.cache[key] = sg
        return sg


def _union(subgraphs: list[OntologyGraph]) -> tuple[np.ndarray, EdgeIndex]:
    """Disjoint union of subgraphs; returns (global id per union row, edges)."""
    nodes, src, rel, dst = [], [], [], []
    offset = 0
    for sg in subgraphs:
        f = sg.facts
        nodes.append(sg.nodes)
        src.append(np.searchsorted(sg.nodes, f[:, 0]) + offset)
        dst.append(np.searchsorted(sg.nodes, f[:, 2]) + offset)
        rel.append(f[:, 1])
        offset += len(sg.nodes)
    cat = lambda xs: np.concatenate(xs).astype(np.int64)  # noqa: E731
    return cat(nodes), EdgeIndex(cat(src), cat(rel), cat(dst), offset)


def encode_local(enc: LocalEncoder, g: OntologyGraph, subjects: Iterable[int]) -> LocalEmbeddings:
    """Encode the hop-limited subgraph of every subject and merge entity rows.

    Entity rows produced by several subgraphs are averaged; rows no subgraph
    reaches stay exactly zero.
    """
    subjects = np.unique(np.asarray(list(subjects), dtype=np.int64))
    if len(subjects) == 0:
        raise ValueError("encode_local needs at least one subject")
    E = g.num_entities
    if subjects[0] < 0 or subjects[-1] >= E:
        raise DataError("subject id is not an entity")

    unique, seen = [], set()
    for s in subjects.tolist():
        sg = enc.subgraph(g, s)
        key = sg.nodes.tobytes()
        if key not in seen:  # identical node sets give identical runs
            seen.add(key)
            unique.append(sg)

    node_ids, edges = _union(unique)
    H0 = ad.gather_rows(enc.node_emb0, node_ids)
    H_out = enc.stack.propagate(H0, edges)
    rows = np.nonzero(node_ids < E)[0]
    ents = node_ids[rows]
    counts = np.bincount(ents, minlength=E).astype(np.float64)
    inv = np.divide(1.0, counts, out=np.zeros_like(counts), where=counts > 0)
    summed = ad.index_add(ad.gather_rows(H_out, rows), ents, E)
    H_l = ad.mul(summed, Tensor(inv[:, None]))
    return LocalEmbeddings(H_l, np.unique(ents))
