"""Frame-matrix files: a ``n_frames feature_dim`` header, then one row per frame."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .base import TokenizerError


def as_frames(frames) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2:
        raise TokenizerError(f"frame matrix must be 2-d, got shape {frames.shape}")
    if not np.all(np.isfinite(frames)):
        raise TokenizerError("frame matrix contains non-finite values")
    return frames


def format_frames(frames) -> str:
    frames = as_frames(frames)
    lines = [f"{frames.shape[0]} {frames.shape[1]}"]
    lines += [" ".join(repr(float(x)) for x in row) for row in frames]
    return "\n".join(lines) + "\n"


def write_frames(path, frames) -> None:
    Path(path).write_text(format_frames(frames))


def parse_frames(text: str) -> np.ndarray:
    lines = text.split("\n")
    try:
        n, d = (int(x) for x in lines[0].split())
    except ValueError:
        raise TokenizerError("frame file header must be 'n_frames feature_dim'") from None
    rows = [ln for ln in lines[1:] if ln.strip()]
    if len(rows) != n:
        raise TokenizerError(f"frame file declares {n} frames but has {len(rows)} rows")
    frames = np.array([[float(x) for x in ln.split()] for ln in rows], dtype=np.float64)
    if n and frames.shape[1] != d:
        raise TokenizerError(f"frame file declares dim {d} but rows have {frames.shape[1]}")
    return as_frames(frames.reshape(n, d))


def read_frames(path) -> np.ndarray:
    return parse_frames(Path(path).read_text())
