"""Ontology-initialised entity embeddings, temporal evolution and cone loss."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DegenerateInputError, Tensor
from .compgcn import CompGcnStack, EdgeIndex, xavier
from .data import OntologyGraph, Snapshot

CONE_EPS = 1e-9


@dataclass
class GlobalEncoder:
    node_emb0: Tensor
    stack: CompGcnStack

    @classmethod
    def init(cls, rng, num_nodes: int, dim: int, num_relations: int, num_layers: int, op: str = "sub"):
        return cls(
            xavier(rng, (num_nodes, dim)),
            CompGcnStack.init(rng, dim, num_relations, num_layers, op),
        )

    def parameters(self, prefix: str = "global") -> dict[str, Tensor]:
        out = {f"{prefix}.node_emb0": self.node_emb0}
        out.update(self.stack.parameters(f"{prefix}.gcn"))
        return out


def encode_ontology(enc: GlobalEncoder, g: OntologyGraph) -> tuple[Tensor, Tensor, Tensor]:
    """Run the stack over the whole ontology graph.

    Returns ``(H_g, concept_emb, H_nodes)``; the first two are row blocks of
    the final-layer output ``H_nodes``.
    """
    H_nodes = enc.stack.propagate(enc.node_emb0, EdgeIndex.from_graph(g))
    E = g.num_entities
    H_g = ad.gather_rows(H_nodes, np.arange(E))
    concepts = ad.gather_rows(H_nodes, np.arange(E, g.num_nodes))
    return H_g, concepts, H_nodes


@dataclass
class BaseEvolutionEncoder:
    """Single-layer mean-aggregating relational GCN followed by a GRU cell."""

    W_self: Tensor
    W_nbr: Tensor
    gru: dict
    rel_table: Tensor
    window: int = 3

    @classmethod
    def init(cls, rng, dim: int, num_relations: int, window: int = 3) -> "BaseEvolutionEncoder":
        gru = {}
        for gate in ("z", "r", "n"):
            gru[f"W_{gate}"] = xavier(rng, (dim, dim))
            gru[f"U_{gate}"] = xavier(rng, (dim, dim))
            gru[f"b_{gate}"] = Tensor(np.zeros(dim), requires_grad=True)
        gru["b_hn"] = Tensor(np.zeros(dim), requires_grad=True)
        return cls(xavier(rng, (dim, dim)), xavier(rng, (dim, dim)), gru, xavier(rng, (num_relations, dim)), window)

    def parameters(self, prefix: str = "base") -> dict[str, Tensor]:
        out = {f"{prefix}.W_self": self.W_self, f"{prefix}.W_nbr": self.W_nbr, f"{prefix}.rel_table": self.rel_table}
        out.update({f"{prefix}.gru.{k}": v for k, v in self.gru.items()})
        return out


def gru_cell(p: dict, x: Tensor, h: Tensor) -> Tensor:
    """``h' = (1 - z) * n + z * h`` with reset gate applied to ``U_n h + b_hn``."""
    def lin(W, v):
        return ad.matmul(v, ad.transpose(W))

    z = ad.sigmoid(ad.add(ad.add(lin(p["W_z"], x), lin(p["U_z"], h)), p["b_z"]))
    r = ad.sigmoid(ad.add(ad.add(lin(p["W_r"], x), lin(p["U_r"], h)), p["b_r"]))
    hn = ad.add(lin(p["U_n"], h), p["b_hn"])
    n = ad.tanh(ad.add(ad.add(lin(p["W_n"], x), p["b_n"]), ad.mul(r, hn)))
    return ad.add(ad.mul(ad.sub(1.0, z), n), ad.mul(z, h))


def snapshot_message(base: BaseEvolutionEncoder, snap: Snapshot, H: Tensor) -> tuple[Tensor, np.ndarray]:
    """Relational aggregation for one snapshot; also returns the presence mask."""
    E = H.shape[0]
    s, r, o = snap.facts[:, 0], snap.facts[:, 1], snap.facts[:, 2]
    deg = np.bincount(o, minlength=E).astype(np.float64)
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    msg = ad.add(ad.gather_rows(H, s), ad.gather_rows(base.rel_table, r))
    agg = ad.mul(ad.index_add(msg, o, E), Tensor(inv[:, None]))
    pre = ad.add(ad.matmul(agg, ad.transpose(base.W_nbr)), ad.matmul(H, ad.transpose(base.W_self)))
    return ad.leaky_relu(pre), deg > 0


def evolve(base: BaseEvolutionEncoder, history: Sequence[Snapshot], H_g: Tensor) -> tuple[Tensor, Tensor]:
    """Evolve ``H_g`` through ``history`` (ascending time).  Returns ``(Z, R)``.

    Entities without incoming facts in a snapshot skip that GRU step.
    """
    H = H_g
    for snap in history:
        if len(snap) == 0:
            continue
        M, present = snapshot_message(base, snap, H)
        keep = Tensor(present[:, None].astype(np.float64))
        H_new = gru_cell(base.gru, M, H)
        H = ad.add(ad.mul(H_new, keep), ad.mul(H, Tensor(1.0 - keep.data)))
    return H, base.rel_table


# ------------------------------------------------------------ entailment cones


def cone_angle(h_c: Tensor, h_ec: Tensor, eps: float = CONE_EPS) -> Tensor:
    """Angle between the parent ``h_c`` and the offset ``h_ec - h_c``."""
    n_c = float(np.linalg.norm(h_c.data))
    n_d = float(np.linalg.norm(h_c.data - h_ec.data))
    if n_c <= eps or n_d <= eps:
        raise DegenerateInputError("cone angle undefined for a zero-norm parent or offset")
    diff = ad.sub(h_c, h_ec)
    num = ad.sub(ad.sub(ad.total(ad.mul(h_ec, h_ec)), ad.total(ad.mul(h_c, h_c))), ad.total(ad.mul(diff, diff)))
    den = ad.scale(ad.mul(ad.row_norm(h_c), ad.row_norm(diff)), 2.0)
    return ad.acos(ad.div(num, den))


def half_aperture(h_c: Tensor, K: float) -> Tensor:
    """``asin(K / |h_c|)`` with the norm floored at ``K + 1e-6``."""
    if K <= 0:
        raise ValueError("cone constant K must be positive")
    norm = ad.clamp(ad.row_norm(h_c), lo=K + 1e-6)
    return ad.asin(ad.div(K, norm))


def entailment_loss(pairs: np.ndarray, H_nodes: Tensor, K: float, eps: float = CONE_EPS) -> tuple[Tensor, bool]:
    """Mean hinge ``max(0, angle - aperture)`` over ``(child, parent)`` rows.

    Returns ``(loss, ok)``; ``ok`` is False when there are no pairs (loss 0).
    Pairs whose child coincides with the parent, or whose parent sits at
    the origin, contribute 0.
    """
    if K <= 0:
        raise ValueError("cone constant K must be positive")
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        return Tensor(0.0), False
    h_ec = ad.gather_rows(H_nodes, pairs[:, 0])
    h_c = ad.gather_rows(H_nodes, pairs[:, 1])
    diff = ad.sub(h_c, h_ec)
    n_c = ad.row_norm(h_c)
    n_d = ad.row_norm(diff)
    valid = (n_c.data > eps) & (n_d.data > eps)
    sq = lambda v: ad.total(ad.mul(v, v), axis=1)  # noqa: E731
    num = ad.sub(ad.sub(sq(h_ec), sq(h_c)), sq(diff))
    den = ad.add(ad.scale(ad.mul(n_c, n_d), 2.0), Tensor((~valid).astype(np.float64)))
    xi = ad.acos(ad.div(num, den))
    psi = ad.asin(ad.div(K, ad.clamp(n_c, lo=K + 1e-6)))
    hinge = ad.mul(ad.relu(ad.sub(xi, psi)), Tensor(valid.astype(np.float64)))
    return ad.scale(ad.total(hinge), 1.0 / len(pairs)), True


def hierarchy_pairs(g: OntologyGraph) -> np.ndarray:
    """``(child, parent)`` pairs from the non-inverse ontology facts."""
    f = g.original_facts
    return np.stack([f[:, 0], f[:, 2]], axis=1) if len(f) else np.empty((0, 2), dtype=np.int64)
