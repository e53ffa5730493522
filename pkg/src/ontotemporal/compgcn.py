"""Composition-based graph convolution over the ontology graph.

Every layer owns its relation table; nothing transforms relation embeddings
from one layer to the next.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import OntologyGraph

OPS = ("sub", "mult", "corr")


def xavier(rng: np.random.Generator, shape, name: str | None = None) -> Tensor:
    fan_in, fan_out = shape[-1], shape[0]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


def compose(op: str, h_ec: Tensor, h_r: Tensor) -> Tensor:
    if h_ec.shape != h_r.shape:
        raise ad.ShapeError(f"compose: length mismatch {h_ec.shape} vs {h_r.shape}")
    if op == "sub":
        return ad.sub(h_ec, h_r)
    if op == "mult":
        return ad.mul(h_ec, h_r)
    if op == "corr":
        return ad.circular_correlation(h_ec, h_r)
    raise ValueError(f"unknown composition {op!r}")


@dataclass
class EdgeIndex:
    """Flat edge arrays plus the per-target 1/in-degree (0 for isolated nodes)."""

    src: np.ndarray
    rel: np.ndarray
    dst: np.ndarray
    num_nodes: int

    @classmethod
    def from_graph(cls, g: OntologyGraph) -> "EdgeIndex":
        f = g.facts
        return cls(f[:, 0], f[:, 1], f[:, 2], g.num_nodes)

    @property
    def inv_degree(self) -> np.ndarray:
        deg = np.bincount(self.dst, minlength=self.num_nodes).astype(np.float64)
        return np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)


@dataclass
class CompGcnLayer:
    W1: Tensor
    W2: Tensor
    rel_emb: Tensor
    op: str = "sub"

    @classmethod
    def init(cls, rng, dim: int, num_relations: int, op: str = "sub") -> "CompGcnLayer":
        if op not in OPS:
            raise ValueError(f"unknown composition {op!r}")
        return cls(
            xavier(rng, (dim, dim)),
            xavier(rng, (dim, dim)),
            xavier(rng, (max(num_relations, 1), dim)),
            op,
        )

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.W1": self.W1, f"{prefix}.W2": self.W2, f"{prefix}.rel_emb": self.rel_emb}

    def propagate(self, H: Tensor, edges: EdgeIndex) -> Tensor:
        d = self.W1.shape[0]
        if H.ndim != 2 or H.shape != (edges.num_nodes, d):
            raise ad.ShapeError(f"layer expects H of shape {(edges.num_nodes, d)}, got {H.shape}")
        self_term = ad.matmul(H, ad.transpose(self.W2))
        if len(edges.src) == 0:
            return ad.leaky_relu(self_term)
        msg = compose(self.op, ad.gather_rows(H, edges.src), ad.gather_rows(self.rel_emb, edges.rel))
        agg = ad.index_add(msg, edges.dst, edges.num_nodes)
        agg = ad.mul(agg, Tensor(edges.inv_degree[:, None]))
        return ad.leaky_relu(ad.add(ad.matmul(agg, ad.transpose(self.W1)), self_term))


def layer_forward(layer: CompGcnLayer, g: OntologyGraph, H: Tensor) -> Tensor:
    return layer.propagate(H, EdgeIndex.from_graph(g))


@dataclass
class CompGcnStack:
    layers: list

    @classmethod
    def init(cls, rng, dim: int, num_relations: int, num_layers: int, op: str = "sub") -> "CompGcnStack":
        return cls([CompGcnLayer.init(rng, dim, num_relations, op) for _ in range(num_layers)])

    @property
    def J(self) -> int:
        return len(self.layers)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for j, layer in enumerate(self.layers):
            out.update(layer.parameters(f"{prefix}.{j}"))
        return out

    def propagate(self, H0: Tensor, edges: EdgeIndex) -> Tensor:
        H = H0
        for layer in self.layers:
            H = layer.propagate(H, edges)
        return H


def stack_forward(stack: CompGcnStack, g: OntologyGraph, H0: Tensor) -> Tensor:
    return stack.propagate(H0, EdgeIndex.from_graph(g))
