from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..vocabulary import PAD
from .config import ModelConfig
from .delay import delay_sequence
from .loss import weighted_cross_entropy
from .transformer import backward, forward, init_params


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimConfig:
    peak_lr: float = 3e-3
    warmup_steps: int = 100
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    clip: float = 1.0
    weight_decay: float = 0.0


def lr_at(step: int, warmup: int, peak: float) -> float:
    """Linear warmup to ``peak`` over ``warmup`` steps, then constant."""
    if warmup > 0 and step < warmup:
        return peak * step / warmup
    return peak


@dataclass
class TrainState:
    config: ModelConfig
    optim: OptimConfig
    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    extra: dict = field(default_factory=dict)

    @classmethod
    def create(cls, config: ModelConfig, optim: OptimConfig | None = None) -> "TrainState":
        params = init_params(config)
        zeros = {k: np.zeros_like(p) for k, p in params.items()}
        return cls(config, optim or OptimConfig(), params, zeros, {k: z.copy() for k, z in zeros.items()})


def collate(sequences: Sequence, delay: bool = False):
    """Stack sequences into right-padded ``(B, T, n_q)`` arrays.

    Under delay interleaving each sequence is delayed before padding. Padding
    rows hold ``Pad`` and carry no loss; causal attention keeps them from
    influencing real rows.
    """
    parts = []
    for s in sequences:
        g, m, w = s.grid, s.loss_mask, s.weights
        if delay:
            g, m, w = delay_sequence(g, m, w)
        parts.append((g, m, w))
    T = max(p[0].shape[0] for p in parts)
    Q = parts[0][0].shape[1]
    B = len(parts)
    grid = np.full((B, T, Q), PAD, dtype=np.int64)
    mask = np.zeros((B, T, Q), dtype=bool)
    weights = np.zeros((B, T, Q))
    for i, (g, m, w) in enumerate(parts):
        grid[i, : len(g)] = g
        mask[i, : len(g)] = m
        weights[i, : len(g)] = w
    return grid, mask, weights


def loss_and_grads(params, config: ModelConfig, grid, mask, weights):
    logits, cache = forward(params, config, grid, return_cache=True)
    loss, _, dlogits = weighted_cross_entropy(logits, grid, mask, weights, return_grad=True)
    return loss, backward(params, config, cache, dlogits)


def global_norm(grads) -> float:
    return math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))


def train_step(state: TrainState, grid, mask, weights, tags=()):
    """One clipped, bias-corrected adaptive-moment update. Mutates and returns ``state``."""
    if np.asarray(grid).shape[0] == 0:
        raise TrainingError("empty batch")
    loss, grads = loss_and_grads(state.params, state.config, grid, mask, weights)
    norm = global_norm(grads)
    if not (math.isfinite(loss) and math.isfinite(norm)):
        shown = ", ".join(f"{d}/{e}" for d, e in list(tags)[:8])
        raise TrainingError(f"non-finite loss {loss} at step {state.step + 1} (batch: {shown})")
    o = state.optim
    scale = min(1.0, o.clip / (norm + 1e-12)) if o.clip > 0 else 1.0
    step = state.step + 1
    lr = lr_at(step, o.warmup_steps, o.peak_lr)
    c1 = 1.0 - o.beta1**step
    c2 = 1.0 - o.beta2**step
    for k, p in state.params.items():
        g = grads[k] * scale
        m, v = state.m[k], state.v[k]
        m *= o.beta1
        m += (1 - o.beta1) * g
        v *= o.beta2
        v += (1 - o.beta2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + o.eps)
        if o.weight_decay and p.ndim > 1:
            update = update + o.weight_decay * p
        p -= (lr * update).astype(p.dtype, copy=False)
    state.step = step
    tokens = int(np.asarray(mask).any(axis=-1).sum())
    return state, {"loss": loss, "lr": lr, "grad_norm": norm, "tokens": tokens}


# -- checkpoints ----------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path, state: TrainState) -> None:
    """``.npz`` with a JSON header (config echo, optimizer config, step, extra)
    and tensors named ``param/<name>``, ``m/<name>``, ``v/<name>``."""
    header = {
        "version": CHECKPOINT_VERSION,
        "model": state.config.to_json(),
        "optim": asdict(state.optim),
        "step": state.step,
        "extra": state.extra,
        "tensors": {k: list(p.shape) for k, p in state.params.items()},
    }
    arrays = {"header": np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)}
    for prefix, d in (("param", state.params), ("m", state.m), ("v", state.v)):
        for k, a in d.items():
            arrays[f"{prefix}/{k}"] = a
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


def load_checkpoint(path) -> TrainState:
    with np.load(path) as z:
        header = json.loads(bytes(z["header"]).decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise TrainingError(f"unsupported checkpoint version {header.get('version')}")
        out = {"param": {}, "m": {}, "v": {}}
        for name in z.files:
            if name == "header":
                continue
            prefix, key = name.split("/", 1)
            out[prefix][key] = z[name].copy()
    for k, shape in header["tensors"].items():
        if list(out["param"][k].shape) != shape:
            raise TrainingError(f"tensor {k} has shape {out['param'][k].shape}, header says {shape}")
    return TrainState(
        ModelConfig.from_json(header["model"]),
        OptimConfig(**header["optim"]),
        out["param"],
        out["m"],
        out["v"],
        header["step"],
        header["extra"],
    )
