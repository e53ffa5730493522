"""Central finite-difference checks against tape gradients.

The numeric side only ever calls the forward function, so it stays an
independent oracle for every recorded backward rule.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import Tape, Tensor


def numeric_grad(fn: Callable[[], Tensor], param: Tensor, h: float = 1e-6) -> np.ndarray:
    flat = param.data.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = float(fn().data)
        flat[i] = orig - h
        down = float(fn().data)
        flat[i] = orig
        grad[i] = (up - down) / (2 * h)
    return grad.reshape(param.shape)


def analytic_grads(fn: Callable[[], Tensor], params: Sequence[Tensor]) -> list[np.ndarray]:
    with Tape() as tape:
        loss = fn()
    tape.backward(loss)
    return [tape.grad(p).copy() for p in params]


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """Norm-wise relative error ``|a - b| / max(|a|, |b|)``."""
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(
    fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-6
) -> float:
    """Worst norm-wise relative error across ``params``."""
    analytic = analytic_grads(fn, params)
    worst = 0.0
    for p, g in zip(params, analytic):
        num = numeric_grad(fn, p, h)
        worst = max(worst, rel_error(g, num))
    return worst
