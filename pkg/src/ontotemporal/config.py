"""Training configuration and the flat ``key = value`` config format.

Example file::

    # comments and blank lines are ignored
    dim = 32
    alpha1 = 0.1
    op = "sub"
    hops = max
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    dim: int = 32
    layers: int = 2  # CompGCN depth J (global and local)
    hops: Optional[int] = 2  # subgraph radius N; None means the full ontology
    K: float = 0.5
    tau: float = 0.07
    alpha1: float = 0.1
    alpha2: float = 0.1
    window: int = 3
    op: str = "sub"
    channels: int = 16
    kernel_width: int = 3
    lr: float = 1e-3
    epochs: int = 30
    grad_clip: float = 1.0
    seed: int = 42
    fusion: str = "gate"  # "gate" or "sum"
    local_encoder: bool = True
    global_init: bool = True
    random_init: bool = False
    select_best: bool = True  # keep the epoch with the best validation MRR
    train_fraction: float = 1.0

    def validate(self) -> "TrainConfig":
        if self.dim < 1 or self.layers < 0 or self.window < 0 or self.epochs < 0:
            raise ConfigError("dim must be >= 1; layers, window and epochs >= 0")
        if self.hops is not None and self.hops < 0:
            raise ConfigError("hops must be >= 0 or 'max'")
        if self.K <= 0 or self.tau <= 0:
            raise ConfigError("K and tau must be positive")
        if self.alpha1 < 0 or self.alpha2 < 0 or self.lr < 0:
            raise ConfigError("alpha1, alpha2 and lr must be non-negative")
        if self.op not in ("sub", "mult", "corr"):
            raise ConfigError(f"op must be sub, mult or corr, not {self.op!r}")
        if self.fusion not in ("gate", "sum"):
            raise ConfigError(f"fusion must be gate or sum, not {self.fusion!r}")
        if self.kernel_width % 2 != 1 or self.channels < 1:
            raise ConfigError("kernel_width must be odd and channels >= 1")
        if not 0 < self.train_fraction <= 1:
            raise ConfigError("train_fraction must lie in (0, 1]")
        return self

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes).validate()


FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _parse_value(key: str, raw: str):
    kind = FIELD_TYPES[key]
    raw = raw.strip()
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        raw = raw[1:-1]
    try:
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "Optional[int]":
            return None if raw.lower() in ("max", "none") else int(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_overrides(pairs: dict) -> dict:
    """Convert raw string values (from a file or CLI) into typed values."""
    out = {}
    for key, raw in pairs.items():
        if key not in FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = raw if not isinstance(raw, str) else _parse_value(key, raw)
    return out


def read_config_text(text: str) -> dict:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (x.strip() for x in line.split("=", 1))
        raw[key] = value
    return parse_overrides(raw)


def load_config(path=None, overrides: Optional[dict] = None) -> TrainConfig:
    """File values first, then ``overrides`` on top."""
    if path and not Path(path).is_file():
        raise ConfigError(f"config file {path} not found")
    values = read_config_text(Path(path).read_text()) if path else {}
    values.update(parse_overrides(overrides or {}))
    return TrainConfig(**values).validate()


def _format(v) -> str:
    if v is None:
        return "max"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return f'"{v}"'
    return repr(v)


def dump_config(cfg: TrainConfig) -> str:
    return "".join(f"{f.name} = {_format(getattr(cfg, f.name))}\n" for f in fields(cfg))
