"""Multitask fusion of dataset manifests and token-budget batch sampling.

Each draw picks a dataset with probability proportional to its weight
(with replacement), then the next example of that dataset's current shuffled
pass (without replacement within a pass). Weights are unnormalised
probabilities, not epoch multipliers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .preprocessing import DatasetManifest, load_manifest
from .template import MultiStreamSequence, TaskTemplate, assemble_sequence, compute_token_weights
from .vocabulary import Vocabulary


class FusionError(ValueError):
    pass


@dataclass(frozen=True)
class FusionSource:
    manifest: str | Path | DatasetManifest
    weight: float = 1.0


@dataclass(frozen=True)
class FusionSpec:
    sources: tuple[FusionSource, ...]
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(
            self,
            "sources",
            tuple(s if isinstance(s, FusionSource) else FusionSource(*s) for s in self.sources),
        )
        if not self.sources:
            raise FusionError("fusion needs at least one source")
        for s in self.sources:
            if not (math.isfinite(s.weight) and s.weight > 0):
                raise FusionError(f"source weight must be finite and > 0, got {s.weight}")


@dataclass
class Batch:
    sequences: list[MultiStreamSequence]
    source_tags: list[tuple[str, str]]
    token_count: int


@dataclass
class SamplerState:
    """Everything the batch stream depends on besides the fused data."""

    rng: np.random.Generator
    orders: list[np.ndarray]
    cursors: list[int]
    passes: list[int]
    pending: tuple[int, int] | None = None
    # epoch mode: datasets whose current pass is used up
    exhausted: set = field(default_factory=set)

    def to_json(self) -> dict:
        return {
            "rng": self.rng.bit_generator.state,
            "orders": [o.tolist() for o in self.orders],
            "cursors": list(self.cursors),
            "passes": list(self.passes),
            "pending": list(self.pending) if self.pending is not None else None,
            "exhausted": sorted(self.exhausted),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SamplerState":
        rng = np.random.default_rng()
        rng.bit_generator.state = obj["rng"]
        return cls(
            rng,
            [np.asarray(o, dtype=np.int64) for o in obj["orders"]],
            list(obj["cursors"]),
            list(obj["passes"]),
            tuple(obj["pending"]) if obj["pending"] is not None else None,
            set(obj["exhausted"]),
        )


class FusedDataset:
    """A sampling view over several manifests sharing one vocabulary."""

    def __init__(
        self,
        manifests: Sequence[DatasetManifest],
        weights: Sequence[float],
        templates: Mapping[str, TaskTemplate],
        vocab: Vocabulary,
        n_q: int,
        weight_table: Mapping[str, float] | None = None,
        stream_classes: Mapping[str, Sequence[str]] | None = None,
        seed: int = 0,
    ):
        self.manifests = list(manifests)
        w = np.asarray(weights, dtype=np.float64)
        self.probs = w / w.sum()
        self.templates = dict(templates)
        self.vocab = vocab
        self.n_q = n_q
        self.weight_table = dict(weight_table) if weight_table else None
        self.stream_classes = dict(stream_classes or {})
        self.seed = seed
        for m in self.manifests:
            if m.task_name not in self.templates:
                raise FusionError(f"no template for task {m.task_name!r} ({m.dataset_name})")

    @property
    def names(self) -> list[str]:
        return [m.dataset_name for m in self.manifests]

    def new_state(self, seed: int | None = None) -> SamplerState:
        rng = np.random.default_rng(self.seed if seed is None else seed)
        orders = [rng.permutation(len(m.examples)) for m in self.manifests]
        n = len(self.manifests)
        return SamplerState(rng, orders, [0] * n, [0] * n)

    def draw_dataset(self, state: SamplerState) -> int:
        u = state.rng.random()
        return min(int(np.searchsorted(np.cumsum(self.probs), u, side="right")), len(self.probs) - 1)

    def _next_example(self, state: SamplerState, d: int) -> int:
        if state.cursors[d] >= len(state.orders[d]):
            state.orders[d] = state.rng.permutation(len(self.manifests[d].examples))
            state.cursors[d] = 0
            state.passes[d] += 1
        i = int(state.orders[d][state.cursors[d]])
        state.cursors[d] += 1
        return i

    def draw(self, state: SamplerState) -> tuple[int, int]:
        d = self.draw_dataset(state)
        return d, self._next_example(state, d)

    def _draw_epoch(self, state: SamplerState):
        live = [d for d in range(len(self.manifests)) if d not in state.exhausted]
        if not live:
            return None
        p = self.probs[live] / self.probs[live].sum()
        j = min(int(np.searchsorted(np.cumsum(p), state.rng.random(), side="right")), len(live) - 1)
        d = live[j]
        i = self._next_example(state, d)
        if state.cursors[d] >= len(state.orders[d]):
            state.exhausted.add(d)
        return d, i

    def length(self, d: int, i: int) -> int:
        return self.manifests[d].examples[i].length

    def sequence(self, d: int, i: int) -> MultiStreamSequence:
        manifest = self.manifests[d]
        example = manifest.examples[i]
        seq = assemble_sequence(self.templates[manifest.task_name], example.items, self.vocab, self.n_q)
        if self.weight_table is not None:
            seq = compute_token_weights(seq, self.weight_table, self.stream_classes)
        return seq


def fuse(spec: FusionSpec, templates, vocab, n_q, weight_table=None, stream_classes=None) -> FusedDataset:
    manifests = []
    for s in spec.sources:
        m = s.manifest if isinstance(s.manifest, DatasetManifest) else load_manifest(s.manifest)
        if not m.examples:
            raise FusionError(f"manifest {m.dataset_name or s.manifest} has no examples")
        manifests.append(m)
    hashes = {m.vocabulary_hash for m in manifests}
    if len(hashes) > 1 or vocab.sha256() not in hashes:
        raise FusionError("manifests were tokenized against different vocabularies")
    return FusedDataset(
        manifests,
        [s.weight for s in spec.sources],
        templates,
        vocab,
        n_q,
        weight_table,
        stream_classes,
        spec.seed,
    )


def sample_batch(fused: FusedDataset, token_budget: int, state: SamplerState, epoch: bool = False) -> Batch:
    """Draw sequences until the next would exceed ``token_budget``.

    The draw that would overflow is kept pending for the next batch. A single
    sequence longer than the budget is returned alone. With ``epoch=True``
    draws come only from datasets whose pass is not yet used up, and an empty
    batch marks the end of the pass (the state then starts a new one).
    """
    if token_budget < 1:
        raise FusionError("token budget must be >= 1")
    picks: list[tuple[int, int]] = []
    total = 0
    while True:
        if state.pending is not None:
            pick, state.pending = state.pending, None
        else:
            pick = fused._draw_epoch(state) if epoch else fused.draw(state)
            if pick is None:
                state.exhausted.clear()
                break
        n = fused.length(*pick)
        if picks and total + n > token_budget:
            state.pending = pick
            break
        picks.append(pick)
        total += n
        if total >= token_budget:
            break
    seqs = [fused.sequence(d, i) for d, i in picks]
    tags = [(fused.manifests[d].dataset_name, fused.manifests[d].examples[i].example_id) for d, i in picks]
    return Batch(seqs, tags, total)
