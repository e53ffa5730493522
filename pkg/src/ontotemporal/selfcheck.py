"""Gradient and invariant suites behind ``ontotemporal selfcheck``.

Each gradient case draws a random f64 instance, builds a scalar loss from the
operation under test and compares tape gradients with central differences.
Instances are kept away from kinks (leaky ReLU at 0, clamp bounds, the cone
hinge) so the finite-difference oracle is well defined.
"""
from __future__ import annotations

import math
import time
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .compgcn import CompGcnLayer, EdgeIndex, compose
from .data import Snapshot
from .evaluate import filtered_rank
from .fusion import GatedFusion, contrastive_loss, fuse
from .global_encoder import BaseEvolutionEncoder, cone_angle, entailment_loss, evolve, half_aperture
from .gradcheck import check_gradients
from .model import ConvDecoder, decode, raw_scores, tkg_loss

GRAD_TOL = 1e-4


def _leaf(rng, *shape, lo=-1.0, hi=1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _weights(rng, *shape) -> Tensor:
    return Tensor(rng.normal(size=shape), requires_grad=True)


def _away_from_zero(rng, *shape, margin=0.05) -> Tensor:
    x = rng.uniform(margin, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return Tensor(x, requires_grad=True)


# each builder: rng -> (loss_fn, params)

def case_matmul(rng):
    a, b = _leaf(rng, 4, 3), _leaf(rng, 3, 2)
    w = rng.normal(size=(4, 2))
    return lambda: ad.total(ad.mul(ad.matmul(a, b), Tensor(w))), [a, b]


def _unary(op, **kw):
    def build(rng):
        if op == "log":
            a = _leaf(rng, 5, lo=0.2, hi=2.0)
        elif op == "clamp":
            a = Tensor(rng.uniform(-0.9, 0.9, size=5), requires_grad=True)
        elif op == "leaky_relu":
            a = _away_from_zero(rng, 5)
        else:
            a = _leaf(rng, 5)
        w = rng.normal(size=5)
        fn = {"sigmoid": ad.sigmoid, "tanh": ad.tanh, "exp": ad.exp, "log": ad.log,
              "leaky_relu": ad.leaky_relu, "clamp": lambda x: ad.clamp(x, -1.0, 1.0)}[op]
        return lambda: ad.total(ad.mul(fn(a), Tensor(w))), [a]
    return build


def _binary(op):
    def build(rng):
        a, b = _leaf(rng, 3, 4), _leaf(rng, 3, 4)
        if op == "div":
            b = _leaf(rng, 3, 4, lo=0.5, hi=2.0)
        w = rng.normal(size=(3, 4))
        fn = {"add": ad.add, "sub": ad.sub, "mul": ad.mul, "div": ad.div}[op]
        return lambda: ad.total(ad.mul(fn(a, b), Tensor(w))), [a, b]
    return build


def case_logsumexp(rng):
    a = _leaf(rng, 3, 5, lo=-3, hi=3)
    w = rng.normal(size=3)
    return lambda: ad.total(ad.mul(ad.logsumexp(a, axis=1), Tensor(w))), [a]


def _compose_case(op):
    def build(rng):
        a, b = _leaf(rng, 5), _leaf(rng, 5)
        w = rng.normal(size=5)
        return lambda: ad.total(ad.mul(compose(op, a, b), Tensor(w))), [a, b]
    return build


def case_cosine(rng):
    a, b = _leaf(rng, 6), _leaf(rng, 6)
    return lambda: ad.cosine_sim(a, b), [a, b]


def case_conv1d(rng):
    x, k = _leaf(rng, 2, 2, 6), _leaf(rng, 3, 2, 3)
    w = rng.normal(size=(2, 3, 6))
    return lambda: ad.total(ad.mul(ad.conv1d_same(x, k), Tensor(w))), [x, k]


def _random_edges(rng, n_nodes, n_edges, n_rel):
    src = rng.integers(0, n_nodes, size=n_edges)
    dst = rng.integers(0, n_nodes, size=n_edges)
    return EdgeIndex(src, rng.integers(0, n_rel, size=n_edges), dst, n_nodes)


def _layer_case(op):
    def build(rng):
        d, n = 4, 6
        layer = CompGcnLayer(_weights(rng, d, d), _weights(rng, d, d), _leaf(rng, 3, d), op)
        edges = _random_edges(rng, n, 10, 3)
        H = _leaf(rng, n, d)
        w = rng.normal(size=(n, d))
        fn = lambda: ad.total(ad.mul(layer.propagate(H, edges), Tensor(w)))  # noqa: E731
        return fn, [H, layer.W1, layer.W2, layer.rel_emb]
    return build


def case_gru_evolution(rng):
    d, E = 3, 5
    base = BaseEvolutionEncoder.init(rng, d, 2, window=2)
    for p in base.parameters().values():
        p.data[...] = rng.normal(scale=0.7, size=p.shape)
    snaps = []
    for t in range(2):
        s = rng.integers(0, E, size=4)
        o = (s + 1 + rng.integers(0, E - 1, size=4)) % E
        snaps.append(Snapshot(t, np.stack([s, rng.integers(0, 2, size=4), o, np.full(4, t)], axis=1)))
    H = _leaf(rng, E, d)
    w = rng.normal(size=(E, d))
    params = [H, base.W_nbr, base.W_self, base.rel_table, base.gru["W_z"], base.gru["U_n"], base.gru["b_hn"]]
    return lambda: ad.total(ad.mul(evolve(base, snaps, H)[0], Tensor(w))), params


def case_cone_loss(rng):
    """Entailment loss with every pair strictly inside the hinge's active side."""
    K = 0.5
    while True:
        H = rng.normal(size=(4, 3)) * 1.5
        pairs = np.array([[0, 1], [2, 3], [0, 3]])
        h_c, h_ec = H[pairs[:, 1]], H[pairs[:, 0]]
        diff = h_c - h_ec
        n_c, n_d = np.linalg.norm(h_c, axis=1), np.linalg.norm(diff, axis=1)
        cos = (np.sum(h_ec**2, 1) - np.sum(h_c**2, 1) - np.sum(diff**2, 1)) / (2 * n_c * n_d)
        xi = np.arccos(np.clip(cos, -1, 1))
        psi = np.arcsin(K / np.maximum(n_c, K + 1e-6))
        if np.all(n_c > K + 0.05) and np.all(xi - psi > 0.05) and np.all(np.abs(cos) < 0.95):
            break
    Ht = Tensor(H, requires_grad=True)
    return lambda: entailment_loss(pairs, Ht, K)[0], [Ht]


def case_gated_fusion(rng):
    d, n = 4, 3
    f = GatedFusion(_weights(rng, d, d), _weights(rng, d, d), _leaf(rng, d))
    H_l, Z = _leaf(rng, n, d), _leaf(rng, n, d)
    w = rng.normal(size=(n, d))
    return lambda: ad.total(ad.mul(fuse(f, H_l, Z), Tensor(w))), [H_l, Z, f.W3, f.W4, f.b]


def case_contrastive(rng):
    Z, H_l = _leaf(rng, 5, 4), _leaf(rng, 5, 4)
    ents = [0, 1, 3, 4]
    return lambda: contrastive_loss(Z, H_l, ents, 0.5)[0], [Z, H_l]


def case_decoder(rng):
    d, E, B = 4, 6, 3
    dec = ConvDecoder(_weights(rng, 2, 2, 3), _weights(rng, 2 * d, d))
    dec.kernels.data *= 0.5
    dec.proj.data *= 0.5
    Z, R = _leaf(rng, E, d), _leaf(rng, 2, d)
    subj, rel = rng.integers(0, E, size=B), rng.integers(0, 2, size=B)
    gold = rng.integers(0, E, size=B)

    def fn():
        q = decode(dec, ad.gather_rows(Z, subj), ad.gather_rows(R, rel))
        return tkg_loss(raw_scores(Z, q), gold)
    return fn, [Z, R, dec.kernels, dec.proj]


GRADIENT_CASES: dict[str, Callable] = {
    "matmul": case_matmul,
    "add": _binary("add"),
    "sub": _binary("sub"),
    "mul": _binary("mul"),
    "div": _binary("div"),
    "sigmoid": _unary("sigmoid"),
    "tanh": _unary("tanh"),
    "exp": _unary("exp"),
    "log": _unary("log"),
    "leaky_relu": _unary("leaky_relu"),
    "clamp": _unary("clamp"),
    "logsumexp": case_logsumexp,
    "cosine_sim": case_cosine,
    "conv1d": case_conv1d,
    "compose_sub": _compose_case("sub"),
    "compose_mult": _compose_case("mult"),
    "compose_corr": _compose_case("corr"),
    "compgcn_layer_sub": _layer_case("sub"),
    "compgcn_layer_mult": _layer_case("mult"),
    "compgcn_layer_corr": _layer_case("corr"),
    "gru_evolution": case_gru_evolution,
    "cone_loss": case_cone_loss,
    "gated_fusion": case_gated_fusion,
    "contrastive_loss": case_contrastive,
    "decoder": case_decoder,
}


def run_gradient_suite(instances: int = 20, seed: int = 0, cases=None) -> dict[str, float]:
    """Worst relative error per case over ``instances`` random draws."""
    rng = np.random.default_rng(seed)
    worst = {}
    for name, build in (cases or GRADIENT_CASES).items():
        err = 0.0
        for _ in range(instances):
            fn, params = build(rng)
            err = max(err, check_gradients(fn, params))
        worst[name] = err
    return worst


def invariant_checks() -> dict[str, bool]:
    """Small hand-checkable properties of the geometry and the ranker."""
    t = lambda *v: Tensor(np.array(v, dtype=np.float64))  # noqa: E731
    out = {
        "cone_angle_on_ray": abs(cone_angle(t(1, 0), t(2, 0)).item()) < 1e-9,
        "cone_angle_right": abs(cone_angle(t(1, 0), t(1, 1)).item() - math.pi / 2) < 1e-9,
        "half_aperture": abs(half_aperture(t(1, 0), 0.5).item() - math.pi / 6) < 1e-9,
        "corr_delta_identity": np.allclose(ad.circular_correlation(t(1, 0, 0), t(3, 4, 5)).data, [3, 4, 5]),
        "filtered_rank_ties": filtered_rank([0.5, 0.9, 0.5, 0.1], 0, [1]) == 1,
    }
    H = Tensor(np.array([[2.0, 0.0], [1.0, 0.0]]))
    out["cone_loss_on_ray"] = entailment_loss(np.array([[0, 1]]), H, 0.5)[0].item() == 0.0
    return out


def run_selfcheck(instances: int = 20, echo=print) -> bool:
    start = time.perf_counter()
    ok = True
    for name, err in run_gradient_suite(instances).items():
        passed = err < GRAD_TOL
        ok &= passed
        echo(f"{'PASS' if passed else 'FAIL'} grad {name:<20} max rel err {err:.2e}")
    for name, passed in invariant_checks().items():
        ok &= passed
        echo(f"{'PASS' if passed else 'FAIL'} invariant {name}")
    echo(f"selfcheck {'passed' if ok else 'FAILED'} in {time.perf_counter() - start:.1f}s")
    return ok
