"""Deterministic synthetic temporal KGs with a concept hierarchy.

Entities are grouped by concept; a few per concept are *popular* and carry
almost all training facts, the rest are *sparse*.  Facts instantiate
behavioural templates ``(concept_a, relation, concept_b)``.  Held-out
timestamps include queries about sparse subjects, whose answers follow the
same templates, so only concept membership links them to what was seen.

Randomness comes from SplitMix64 (seed -> stream), so the files can be
reproduced outside Python:

    state += 0x9E3779B97F4A7C15
    z = state; z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB; out = z ^ (z >> 31)

(all arithmetic mod 2**64).  ``below(n) = out % n`` and
``uniform() = (out >> 11) * 2**-53``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .data import DatasetBundle, OntologyGraph, _degrees, save_dataset

MASK64 = (1 << 64) - 1

ISA, SUBCLASS = 0, 1


class SpecError(ValueError):
    pass


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        return self.next() % n

    def uniform(self) -> float:
        return (self.next() >> 11) * (1.0 / (1 << 53))


def default_templates(concepts: int, relations: int) -> list:
    """Relation ``r`` maps concept ``a`` to ``(a + r + 1) mod concepts``."""
    return [(a, r, (a + r + 1) % concepts) for r in range(relations) for a in range(concepts)]


@dataclass
class SynthSpec:
    concepts: int = 20
    entities_per_concept: int = 10
    popular_fraction: float = 0.3
    templates: Optional[list] = None  # default_templates(concepts, relations)
    timestamps: int = 50
    facts_per_step: int = 100
    sparse_test_fraction: float = 0.5
    seed: int = 42
    relations: int = 4
    sparse_train_rate: float = 0.02  # chance a training slot uses a sparse entity
    concepts_per_group: int = 5  # fan-in of the upper hierarchy level

    def __post_init__(self):
        if self.templates is None:
            self.templates = default_templates(self.concepts, self.relations)
        self.templates = [tuple(int(x) for x in t) for t in self.templates]

    def validate(self) -> "SynthSpec":
        if self.concepts < 1 or self.entities_per_concept < 1 or self.timestamps < 1:
            raise SpecError("concepts, entities_per_concept and timestamps must be positive")
        if not 0 < self.popular_fraction < 1:
            raise SpecError("popular_fraction must lie in (0, 1)")
        if not self.templates:
            raise SpecError("at least one template is required")
        for a, r, b in self.templates:
            if not (0 <= a < self.concepts and 0 <= b < self.concepts) or r < 0:
                raise SpecError(f"template {(a, r, b)} references a missing concept")
        if self.facts_per_step < 1 or self.concepts_per_group < 1:
            raise SpecError("facts_per_step and concepts_per_group must be positive")
        for name in ("sparse_test_fraction", "sparse_train_rate"):
            if not 0 <= getattr(self, name) <= 1:
                raise SpecError(f"{name} must lie in [0, 1]")
        return self

    @classmethod
    def from_json(cls, path) -> "SynthSpec":
        raw = json.loads(Path(path).read_text())
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise SpecError(f"unknown spec keys {sorted(unknown)}")
        return cls(**raw).validate()

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    # layout helpers
    @property
    def num_entities(self) -> int:
        return self.concepts * self.entities_per_concept

    @property
    def popular_per_concept(self) -> int:
        n = max(1, round(self.popular_fraction * self.entities_per_concept))
        return min(n, self.entities_per_concept)

    @property
    def num_groups(self) -> int:
        return math.ceil(self.concepts / self.concepts_per_group)

    @property
    def num_relations(self) -> int:
        return max(r for _, r, _ in self.templates) + 1

    def members(self, concept: int, popular: bool) -> range:
        base = concept * self.entities_per_concept
        k = self.popular_per_concept
        return range(base, base + k) if popular else range(base + k, base + self.entities_per_concept)

    def is_popular(self, entity: int) -> bool:
        return entity % self.entities_per_concept < self.popular_per_concept

    def split_sizes(self) -> tuple[int, int, int]:
        hold = max(1, round(0.1 * self.timestamps)) if self.timestamps >= 3 else 0
        return self.timestamps - 2 * hold, hold, hold


def _pick(rng: SplitMix64, spec: SynthSpec, concept: int, sparse: bool) -> int:
    pool = spec.members(concept, popular=not sparse)
    if len(pool) == 0:
        pool = spec.members(concept, popular=True)
    return pool[rng.below(len(pool))]


def _sample_step(rng: SplitMix64, spec: SynthSpec, t: int, sparse_subject_p: float) -> list:
    facts: list = []
    seen = set()
    attempts = 0
    while len(facts) < spec.facts_per_step and attempts < 20 * spec.facts_per_step:
        attempts += 1
        a, r, b = spec.templates[rng.below(len(spec.templates))]
        s = _pick(rng, spec, a, rng.uniform() < sparse_subject_p)
        o = _pick(rng, spec, b, rng.uniform() < spec.sparse_train_rate)
        if s == o or (s, r, o) in seen:
            continue
        seen.add((s, r, o))
        facts.append((s, r, o, t))
    return facts


def ontology_facts(spec: SynthSpec) -> np.ndarray:
    E = spec.num_entities
    rows = [(e, ISA, E + e // spec.entities_per_concept) for e in range(E)]
    rows += [(E + c, SUBCLASS, E + spec.concepts + c // spec.concepts_per_group) for c in range(spec.concepts)]
    return np.array(rows, dtype=np.int64)


def generate(spec: SynthSpec) -> DatasetBundle:
    """Raw (non-augmented) bundle; valid/test may be empty for tiny specs."""
    spec.validate()
    rng = SplitMix64(spec.seed)
    n_train, n_valid, _ = spec.split_sizes()
    splits = {"train": [], "valid": [], "test": []}
    for t in range(spec.timestamps):
        if t < n_train:
            name, p_sparse = "train", spec.sparse_train_rate
        else:
            name = "valid" if t < n_train + n_valid else "test"
            p_sparse = spec.sparse_test_fraction
        splits[name] += _sample_step(rng, spec, t, p_sparse)
    arrays = {k: np.array(v, dtype=np.int64).reshape(-1, 4) for k, v in splits.items()}
    E = spec.num_entities
    onto = ontology_facts(spec)
    n_concepts = spec.concepts + spec.num_groups
    names = {e: f"entity_{e}" for e in range(E)}
    names.update({E + c: f"concept_{c}" for c in range(spec.concepts)})
    names.update({E + spec.concepts + g: f"group_{g}" for g in range(spec.num_groups)})
    return DatasetBundle(
        train=arrays["train"],
        valid=arrays["valid"],
        test=arrays["test"],
        entity_count=E,
        relation_count=spec.num_relations,
        timestamp_count=spec.timestamps,
        ontology=OntologyGraph(E, n_concepts, 2, onto),
        train_degree=_degrees(arrays["train"], E),
        raw_timestamps=np.arange(spec.timestamps),
        names=names,
    )


def generate_to(spec: SynthSpec, out_dir) -> Path:
    out = Path(out_dir)
    save_dataset(generate(spec), out)
    (out / "synth_spec.json").write_text(spec.to_json() + "\n")
    return out
