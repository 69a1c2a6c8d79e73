"""Delay interleaving: stream ``q`` is shifted down by ``q`` rows.

``delay_apply`` maps a ``(T, n_q, ...)`` array to ``(T + n_q - 1, n_q, ...)``;
vacated cells take ``fill`` (``DelayPad`` for ids, ``False`` for masks, ``0``
for weights). A leading batch axis is not supported; delay each sequence
before padding a batch.
"""
from __future__ import annotations

import numpy as np

from ..vocabulary import DELAY_PAD


def delay_apply(grid, fill=DELAY_PAD) -> np.ndarray:
    grid = np.asarray(grid)
    if grid.ndim < 2:
        raise ValueError(f"expected a (T, n_q) grid, got shape {grid.shape}")
    T, n_q = grid.shape[:2]
    out = np.full((T + n_q - 1,) + grid.shape[1:], fill, dtype=grid.dtype)
    for q in range(n_q):
        out[q : q + T, q] = grid[:, q]
    return out


def delay_invert(delayed) -> np.ndarray:
    delayed = np.asarray(delayed)
    if delayed.ndim < 2:
        raise ValueError(f"expected a (T + n_q - 1, n_q) grid, got shape {delayed.shape}")
    n_q = delayed.shape[1]
    T = delayed.shape[0] - (n_q - 1)
    if T < 0:
        raise ValueError(f"{delayed.shape[0]} rows cannot hold a delayed grid with {n_q} streams")
    out = np.empty((T,) + delayed.shape[1:], dtype=delayed.dtype)
    for q in range(n_q):
        out[:, q] = delayed[q : q + T, q]
    return out


def delay_sequence(grid, loss_mask, weights):
    """Delay ids, mask and weights together; DelayPad cells carry no loss."""
    return delay_apply(grid), delay_apply(loss_mask, False), delay_apply(weights, 0.0)
