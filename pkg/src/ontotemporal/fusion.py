"""Gated blending of the evolved and local views, and their contrastive loss."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DegenerateInputError, Tensor
from .compgcn import xavier


@dataclass
class GatedFusion:
    W3: Tensor
    W4: Tensor
    b: Tensor

    @classmethod
    def init(cls, rng, dim: int) -> "GatedFusion":
        return cls(xavier(rng, (dim, dim)), xavier(rng, (dim, dim)), Tensor(np.zeros(dim), requires_grad=True))

    def parameters(self, prefix: str = "fusion") -> dict[str, Tensor]:
        return {f"{prefix}.W3": self.W3, f"{prefix}.W4": self.W4, f"{prefix}.b": self.b}


def gate(f: GatedFusion, H_l: Tensor, Z: Tensor) -> Tensor:
    logits = ad.add(ad.add(ad.matmul(H_l, ad.transpose(f.W3)), ad.matmul(Z, ad.transpose(f.W4))), f.b)
    return ad.sigmoid(logits)


def fuse(f: GatedFusion, H_l: Tensor, Z: Tensor) -> Tensor:
    if H_l.shape != Z.shape:
        raise ad.ShapeError(f"fuse: H_l {H_l.shape} and Z {Z.shape} differ")
    theta = gate(f, H_l, Z)
    return ad.add(ad.mul(theta, H_l), ad.mul(ad.sub(1.0, theta), Z))


def fuse_sum(H_l: Tensor, Z: Tensor) -> Tensor:
    if H_l.shape != Z.shape:
        raise ad.ShapeError(f"fuse_sum: H_l {H_l.shape} and Z {Z.shape} differ")
    return ad.add(H_l, Z)


def contrastive_batch(H_l: Tensor, entities: Sequence[int]) -> np.ndarray:
    """Sorted unique ids whose local row is not exactly zero."""
    ids = np.unique(np.asarray(entities, dtype=np.int64))
    if len(ids) == 0:
        return ids
    nonzero = np.any(H_l.data[ids] != 0.0, axis=1)
    return ids[nonzero]


def contrastive_loss(Z: Tensor, H_l: Tensor, entities: Sequence[int], tau: float) -> tuple[Tensor, bool]:
    """Cross-view loss where each row's negatives exclude its own positive.

    ``-mean_u [ s(u,u)/tau - log sum_{j != u} exp(s(u,j)/tau) ]`` with cosine
    ``s``.  Returns ``(loss, ok)``; with fewer than two usable entities the
    term is skipped and ``(0, False)`` is returned.
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    ids = contrastive_batch(H_l, entities)
    m = len(ids)
    if m < 2:
        return Tensor(0.0), False
    z = ad.gather_rows(Z, ids)
    h = ad.gather_rows(H_l, ids)
    if np.any(np.linalg.norm(z.data, axis=1) <= ad.COSINE_EPS):
        raise DegenerateInputError("zero-norm evolved embedding in contrastive batch")
    S = ad.scale(ad.cosine_matrix(z, h), 1.0 / tau)
    rows = np.arange(m)
    pos = ad.take(S, rows * m + rows)
    off = np.arange(m * m).reshape(m, m)[~np.eye(m, dtype=bool)].reshape(m, m - 1)
    neg = ad.logsumexp(ad.take(S, off), axis=1)
    return ad.scale(ad.total(ad.sub(pos, neg)), -1.0 / m), True
