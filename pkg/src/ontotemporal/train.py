"""Optimiser and the per-timestamp training loop."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .autodiff import NumericalError, Tape
from .config import TrainConfig
from .data import DatasetBundle
from .model import OntoModel, tkg_loss, total_loss

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "L_tkg", "L_hie", "L_cl", "L_total", "val_mrr", "seconds")


class TrainingAborted(RuntimeError):
    def __init__(self, timestamp: int, reason: str):
        super().__init__(f"numerical failure at timestamp {timestamp}: {reason}")
        self.timestamp = timestamp


class Adam:
    def __init__(self, params: dict, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, grads: dict) -> None:
        self.step_count += 1
        c1 = 1.0 - self.b1**self.step_count
        c2 = 1.0 - self.b2**self.step_count
        for k, p in self.params.items():
            g = grads.get(k)
            if g is None:
                continue
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            p.data -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def clip_grad_norm(grads: dict, max_norm: float) -> float:
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * factor
    return norm


def train_timestamps(bundle: DatasetBundle) -> list[int]:
    return sorted(set(bundle.train[:, 3].tolist()))


@dataclass
class EpochStats:
    epoch: int
    L_tkg: float
    L_hie: float
    L_cl: float
    L_total: float
    val_mrr: float
    seconds: float

    def row(self) -> list:
        return [self.epoch, self.L_tkg, self.L_hie, self.L_cl, self.L_total, self.val_mrr, self.seconds]


def train_step(model: OntoModel, bundle: DatasetBundle, t: int, opt: Adam) -> tuple[float, float, float, float]:
    cfg = model.cfg
    queries = bundle.all_snapshots[t].facts
    params = model.parameters()
    try:
        # overflow surfaces through the finite checks as NumericalError
        with np.errstate(over="ignore", invalid="ignore"), Tape() as tape:
            out = model.forward(bundle, t, queries)
            l_tkg = tkg_loss(out.logits, queries[:, 2])
            loss = total_loss(l_tkg, out.l_hie, out.l_cl, cfg.alpha1, cfg.alpha2)
        tape.backward(loss)
    except (NumericalError, FloatingPointError) as exc:
        raise TrainingAborted(t, str(exc)) from exc
    grads = {k: tape.grad(p) for k, p in params.items()}
    clip_grad_norm(grads, cfg.grad_clip)
    opt.step(grads)
    return out_floats(l_tkg, out.l_hie, out.l_cl, loss)


def out_floats(*tensors) -> tuple:
    return tuple(float(t.data) for t in tensors)


def train_epoch(model: OntoModel, bundle: DatasetBundle, opt: Adam) -> tuple[float, float, float, float]:
    """One pass over the training timestamps in ascending order; mean losses."""
    sums = np.zeros(4)
    steps = 0
    for t in train_timestamps(bundle):
        sums += train_step(model, bundle, t, opt)
        steps += 1
    return tuple((sums / max(steps, 1)).tolist())


def fit(
    model: OntoModel,
    bundle: DatasetBundle,
    log_path=None,
    on_epoch: Optional[Callable[[EpochStats], None]] = None,
) -> list[EpochStats]:
    """Train for ``cfg.epochs`` epochs, validating after each one.

    With ``select_best`` the parameters of the best validation epoch are
    restored at the end.
    """
    from .evaluate import evaluate

    cfg = model.cfg
    opt = Adam(model.parameters(), lr=cfg.lr)
    history: list[EpochStats] = []
    best_mrr, best_state = -1.0, None
    writer = fh = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
    try:
        for epoch in range(1, cfg.epochs + 1):
            start = time.perf_counter()
            losses = train_epoch(model, bundle, opt)
            val_mrr = evaluate(model, bundle, "valid").mrr
            stats = EpochStats(epoch, *losses, val_mrr, time.perf_counter() - start)
            history.append(stats)
            logger.info("epoch %d loss %.4f val_mrr %.4f", epoch, stats.L_total, val_mrr)
            if writer is not None:
                writer.writerow([repr(x) if isinstance(x, float) else x for x in stats.row()])
                fh.flush()
            if on_epoch is not None:
                on_epoch(stats)
            if cfg.select_best and val_mrr > best_mrr:
                best_mrr, best_state = val_mrr, model.state()
    finally:
        if fh is not None:
            fh.close()
    if cfg.select_best and best_state is not None:
        model.load_state(best_state)
    return history
