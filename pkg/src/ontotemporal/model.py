"""Full model: encoders, fusion, convolutional decoder, losses, checkpoints."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .compgcn import xavier
from .config import TrainConfig, dump_config, read_config_text
from .data import DatasetBundle
from .fusion import GatedFusion, contrastive_loss, fuse, fuse_sum
from .global_encoder import (
    BaseEvolutionEncoder,
    GlobalEncoder,
    encode_ontology,
    entailment_loss,
    evolve,
    hierarchy_pairs,
)
from .local_encoder import LocalEncoder, encode_local

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class ConvDecoder:
    kernels: Tensor  # (C, 2, w)
    proj: Tensor  # (C * d, d)

    @classmethod
    def init(cls, rng, dim: int, channels: int = 16, width: int = 3) -> "ConvDecoder":
        bound = np.sqrt(6.0 / (2 * width + channels))
        kernels = Tensor(rng.uniform(-bound, bound, size=(channels, 2, width)), requires_grad=True)
        return cls(kernels, xavier(rng, (channels * dim, dim)))

    @property
    def dim(self) -> int:
        return self.proj.shape[1]

    def parameters(self, prefix: str = "decoder") -> dict[str, Tensor]:
        return {f"{prefix}.kernels": self.kernels, f"{prefix}.proj": self.proj}


def decode(dec: ConvDecoder, z_s: Tensor, r: Tensor) -> Tensor:
    """Query vectors from subject/relation rows; accepts (d,) or (B, d) inputs."""
    single = z_s.ndim == 1
    if single:
        z_s, r = ad.reshape(z_s, (1, -1)), ad.reshape(r, (1, -1))
    if z_s.shape != r.shape or z_s.shape[1] != dec.dim:
        raise ad.ShapeError(f"decode: expected (B, {dec.dim}) inputs, got {z_s.shape} and {r.shape}")
    x = ad.stack([z_s, r], axis=1)
    h = ad.leaky_relu(ad.conv1d_same(x, dec.kernels))
    B = z_s.shape[0]
    q = ad.matmul(ad.reshape(h, (B, -1)), dec.proj)
    return ad.reshape(q, (dec.dim,)) if single else q


def raw_scores(Z_hat: Tensor, query: Tensor) -> Tensor:
    """Dot products between query vectors and every entity row."""
    return ad.matmul(query, ad.transpose(Z_hat))


def score_all(dec: ConvDecoder, Z_hat: Tensor, z_s: Tensor, r: Tensor) -> Tensor:
    return ad.sigmoid(raw_scores(Z_hat, decode(dec, z_s, r)))


def tkg_loss(logits: Tensor, gold) -> Tensor:
    """Mean softmax cross-entropy of the gold entity per query row."""
    gold = np.asarray(gold, dtype=np.int64)
    if logits.ndim != 2 or len(gold) == 0 or logits.shape[0] != len(gold):
        raise ValueError("tkg_loss needs a non-empty (B, |E|) score matrix and B gold ids")
    B, E = logits.shape
    picked = ad.take(logits, np.arange(B) * E + gold)
    return ad.mean(ad.sub(ad.logsumexp(logits, axis=1), picked))


def total_loss(l_tkg: Tensor, l_hie: Tensor, l_cl: Tensor, alpha1: float, alpha2: float) -> Tensor:
    for name, part in (("L_tkg", l_tkg), ("L_hie", l_hie), ("L_cl", l_cl)):
        if not np.all(np.isfinite(part.data)):
            raise ad.NumericalError(f"{name} is not finite: {part.data}")
    return ad.add(ad.add(l_tkg, ad.scale(l_hie, alpha1)), ad.scale(l_cl, alpha2))


@dataclass
class ForwardResult:
    Z_hat: Tensor
    Z: Tensor
    R: Tensor
    logits: Tensor
    l_hie: Tensor
    l_cl: Tensor
    covered: Optional[np.ndarray] = None


class OntoModel:
    """All learnable parts behind a single named-parameter registry."""

    def __init__(self, cfg: TrainConfig, num_entities: int, num_concepts: int,
                 num_relations: int, num_onto_relations: int):
        cfg.validate()
        self.cfg = cfg
        self.num_entities = num_entities
        self.num_concepts = num_concepts
        self.num_relations = num_relations
        self.num_onto_relations = num_onto_relations
        rng = np.random.default_rng(cfg.seed)
        n_nodes, d = num_entities + num_concepts, cfg.dim
        self.glob = GlobalEncoder.init(rng, n_nodes, d, num_onto_relations, cfg.layers, cfg.op)
        self.base = BaseEvolutionEncoder.init(rng, d, num_relations, cfg.window)
        self.local = LocalEncoder.init(rng, n_nodes, d, num_onto_relations, cfg.layers, cfg.hops, cfg.op)
        self.fusion = GatedFusion.init(rng, d)
        self.decoder = ConvDecoder.init(rng, d, cfg.channels, cfg.kernel_width)
        self.entity_table = xavier(rng, (num_entities, d))

    @classmethod
    def for_bundle(cls, cfg: TrainConfig, bundle: DatasetBundle) -> "OntoModel":
        if not bundle.augmented:
            raise ValueError("model expects an inverse-augmented bundle")
        g = bundle.ontology
        return cls(cfg, bundle.entity_count, g.num_concepts, bundle.relation_count, g.num_relations)

    @property
    def uses_ontology_init(self) -> bool:
        return self.cfg.global_init and not self.cfg.random_init

    @property
    def uses_global_gcn(self) -> bool:
        return self.uses_ontology_init or (self.cfg.global_init and self.cfg.alpha1 > 0)

    def parameters(self) -> dict[str, Tensor]:
        """Every learnable tensor, in a fixed order.  Unused parts are included."""
        out = {}
        out.update(self.glob.parameters("global"))
        out.update(self.base.parameters("base"))
        out.update(self.local.parameters("local"))
        out.update(self.fusion.parameters("fusion"))
        out.update(self.decoder.parameters("decoder"))
        out["entity_table"] = self.entity_table
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(state) != set(params):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            raise CheckpointError(f"parameter names differ; missing={missing} unexpected={extra}")
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise CheckpointError(f"{k}: shape {state[k].shape} does not match model {p.shape}")
            p.data[...] = state[k]

    # ------------------------------------------------------------- forward

    def initial_embeddings(self, bundle: DatasetBundle) -> tuple[Tensor, Tensor]:
        """``(H_g, L_hie)`` for the configured ablation."""
        cfg = self.cfg
        g = bundle.ontology
        l_hie = Tensor(0.0)
        if not self.uses_global_gcn:
            return self.entity_table, l_hie
        H_g, _, H_nodes = encode_ontology(self.glob, g)
        if cfg.alpha1 > 0:
            l_hie, _ = entailment_loss(hierarchy_pairs(g), H_nodes, cfg.K)
        return (H_g if self.uses_ontology_init else self.entity_table), l_hie

    def forward(self, bundle: DatasetBundle, t: int, queries: np.ndarray, init=None) -> ForwardResult:
        """Score ``queries`` (rows ``s, r, o, t``) at timestamp index ``t``.

        ``init`` may carry a precomputed ``initial_embeddings`` result, which
        is valid as long as parameters have not changed.
        """
        cfg = self.cfg
        H_g, l_hie = init if init is not None else self.initial_embeddings(bundle)
        lo = max(0, t - cfg.window)
        Z, R = evolve(self.base, bundle.all_snapshots[lo:t], H_g)
        l_cl = Tensor(0.0)
        covered = None
        subjects = queries[:, 0]
        if cfg.local_encoder:
            loc = encode_local(self.local, bundle.ontology, subjects)
            covered = loc.covered
            Z_hat = fuse(self.fusion, loc.H_l, Z) if cfg.fusion == "gate" else fuse_sum(loc.H_l, Z)
            if cfg.alpha2 > 0:
                l_cl, _ = contrastive_loss(Z, loc.H_l, subjects, cfg.tau)
        else:
            Z_hat = Z
        q = decode(self.decoder, ad.gather_rows(Z_hat, subjects), ad.gather_rows(R, queries[:, 1]))
        return ForwardResult(Z_hat, Z, R, raw_scores(Z_hat, q), l_hie, l_cl, covered)


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(model: OntoModel, path) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": dump_config(model.cfg),
        "sizes": [model.num_entities, model.num_concepts, model.num_relations, model.num_onto_relations],
        "shapes": {k: list(v.shape) for k, v in model.parameters().items()},
    }
    arrays = {f"param/{k}": v for k, v in model.state().items()}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path) -> OntoModel:
    with np.load(path, allow_pickle=False) as npz:
        meta = json.loads(str(npz["__meta__"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {meta.get('version')}")
        state = {k[len("param/"):]: npz[k] for k in npz.files if k.startswith("param/")}
    cfg = TrainConfig(**read_config_text(meta["config"])).validate()
    model = OntoModel(cfg, *meta["sizes"])
    model.load_state(state)
    return model
