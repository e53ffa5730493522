"""Time-aware filtered ranking, degree-bucket reports and parameter sweeps."""
from __future__ import annotations

import csv
import io
import json
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .data import BUCKET_LABELS, DatasetBundle, bucket_of

HITS_AT = (1, 3, 10)


def filtered_rank(scores, gold: int, known_true: Iterable[int]) -> int:
    """``1 + #{e not in known_true - {gold} : score[e] > score[gold]}``.

    Ties never count against the gold entity.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if not 0 <= gold < len(scores):
        raise IndexError(f"gold id {gold} out of range for {len(scores)} candidates")
    higher = scores > scores[gold]
    drop = [e for e in known_true if e != gold]
    if drop:
        higher[np.asarray(drop, dtype=np.int64)] = False
    return 1 + int(higher.sum())


def known_true_index(quads: np.ndarray) -> dict:
    """``(s, r, t) -> sorted array of objects`` over the given facts."""
    idx = defaultdict(set)
    for s, r, o, t in quads.tolist():
        idx[(s, r, t)].add(o)
    return {k: np.array(sorted(v), dtype=np.int64) for k, v in idx.items()}


def ranks_for_block(logits: np.ndarray, queries: np.ndarray, known: dict) -> np.ndarray:
    """Vectorised filtered ranks for one score matrix (rows align with queries)."""
    B = len(queries)
    rows = np.arange(B)
    gold = queries[:, 2]
    gold_score = logits[rows, gold]
    higher = logits > gold_score[:, None]
    for i, (s, r, o, t) in enumerate(queries.tolist()):
        others = known.get((s, r, t))
        if others is not None:
            higher[i, others] = False
    return 1 + higher.sum(axis=1)


def _summarize(ranks: np.ndarray) -> tuple[float, dict]:
    if len(ranks) == 0:
        return 0.0, {k: 0.0 for k in HITS_AT}
    rr = 1.0 / ranks
    return float(rr.mean()), {k: float((ranks <= k).mean()) for k in HITS_AT}


@dataclass
class RankReport:
    per_query: list  # (s, r, o, t, direction, rank)
    mrr: float
    hits: dict
    buckets: dict = field(default_factory=dict)  # label -> (count, mrr, h1, h10)

    @classmethod
    def from_ranks(cls, per_query: list, degrees: Optional[np.ndarray] = None) -> "RankReport":
        ranks = np.array([q[5] for q in per_query], dtype=np.float64)
        mrr, hits = _summarize(ranks)
        buckets = {}
        if degrees is not None:
            labels = [bucket_of(int(degrees[q[0]])) for q in per_query]
            for label in BUCKET_LABELS:
                sel = np.array([lab == label for lab in labels], dtype=bool)
                if sel.any():
                    b_mrr, b_hits = _summarize(ranks[sel])
                    buckets[label] = (int(sel.sum()), b_mrr, b_hits[1], b_hits[10])
                else:
                    buckets[label] = (0, None, None, None)
        return cls(per_query, mrr, hits, buckets)

    def to_json(self, include_ranks: bool = False) -> str:
        payload = {
            "mrr": self.mrr,
            "hits": {str(k): v for k, v in self.hits.items()},
            "count": len(self.per_query),
            "buckets": {k: dict(zip(("count", "mrr", "h1", "h10"), v)) for k, v in self.buckets.items()},
        }
        if include_ranks:
            payload["ranks"] = [list(q) for q in self.per_query]
        return json.dumps(payload, indent=2, sort_keys=True)

    def rank_tsv(self) -> str:
        lines = ["s\tr\to\tt\tdirection\trank"]
        lines += ["\t".join(str(x) for x in q) for q in self.per_query]
        return "\n".join(lines) + "\n"

    def bucket_table(self) -> str:
        out = io.StringIO()
        out.write(f"{'degree':<12}{'num':>6}{'MRR':>8}{'H@1':>8}{'H@10':>8}\n")
        for label, (n, mrr, h1, h10) in self.buckets.items():
            if n == 0:
                out.write(f"{label:<12}{0:>6}{'-':>8}{'-':>8}{'-':>8}\n")
            else:
                out.write(f"{label:<12}{n:>6}{mrr:>8.3f}{h1:>8.3f}{h10:>8.3f}\n")
        return out.getvalue()


def evaluate(model, bundle: DatasetBundle, split: str) -> RankReport:
    """Rank every query of ``split``: object queries and their inverse subject queries.

    Ranking uses the raw decoder dot products; the sigmoid score is strictly
    monotone in them, and the raw values cannot saturate into float ties.
    """
    if not bundle.augmented:
        raise ValueError("evaluate expects an inverse-augmented bundle")
    quads = bundle.split(split)
    known = known_true_index(bundle.split("all"))
    base_r = bundle.base_relation_count
    per_query = []
    init = model.initial_embeddings(bundle)
    for t in sorted(set(quads[:, 3].tolist())):
        block = quads[quads[:, 3] == t]
        logits = model.forward(bundle, t, block, init=init).logits.data
        ranks = ranks_for_block(logits, block, known)
        for (s, r, o, tt), rank in zip(block.tolist(), ranks.tolist()):
            direction = "object" if r < base_r else "subject"
            per_query.append((s, r, o, tt, direction, int(rank)))
    return RankReport.from_ranks(per_query, bundle.train_degree)


SWEEP_AXES = ("train_fraction", "N", "J", "K")
SWEEP_COLUMNS = ("axis", "value", "mrr", "h1", "h10", "seconds")


def subsample_train(raw_bundle: DatasetBundle, fraction: float, seed: int) -> DatasetBundle:
    """Seeded random subset of training facts; valid and test stay untouched."""
    from .data import with_train

    if fraction >= 1.0:
        return raw_bundle
    rng = np.random.default_rng(seed)
    n = len(raw_bundle.train)
    keep = np.sort(rng.choice(n, size=max(1, int(round(fraction * n))), replace=False))
    return with_train(raw_bundle, raw_bundle.train[keep])


def sweep(axis: str, values: list, cfg, raw_bundle: DatasetBundle, out_csv=None) -> list[dict]:
    """Train one model per value (same seed) and evaluate on the test split."""
    from .data import augment_inverse
    from .model import OntoModel
    from .train import fit

    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    if not values:
        raise ValueError("sweep needs at least one value")
    field_of = {"N": "hops", "J": "layers", "K": "K", "train_fraction": "train_fraction"}
    rows = []
    for value in values:
        run_cfg = cfg.replace(**{field_of[axis]: value})
        data = augment_inverse(subsample_train(raw_bundle, run_cfg.train_fraction, run_cfg.seed))
        start = time.perf_counter()
        model = OntoModel.for_bundle(run_cfg, data)
        fit(model, data)
        report = evaluate(model, data, "test")
        rows.append({
            "axis": axis,
            "value": "max" if value is None else value,
            "mrr": report.mrr,
            "h1": report.hits[1],
            "h10": report.hits[10],
            "seconds": time.perf_counter() - start,
        })
    if out_csv is not None:
        with open(Path(out_csv), "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
            w.writeheader()
            w.writerows(rows)
    return rows
