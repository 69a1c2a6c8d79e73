from __future__ import annotations

import numpy as np


class NoSupervisionError(ValueError):
    pass


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def weighted_cross_entropy(logits, grid, loss_mask, weights, return_grad: bool = False):
    """Weighted mean next-row negative log-likelihood.

    ``logits[..., t, q, :]`` is scored against ``grid[..., t + 1, q]`` wherever
    ``loss_mask[..., t + 1, q]`` holds, weighted by ``weights[..., t + 1, q]``
    and normalised by the total masked weight. Accumulates in float64.

    Returns ``(loss, per_cell)`` where ``per_cell`` has shape ``(..., T - 1, n_q)``
    and is zero on unsupervised cells; with ``return_grad`` also ``dloss/dlogits``.
    """
    logits = np.asarray(logits)
    grid = np.asarray(grid)
    mask = np.asarray(loss_mask, dtype=bool)[..., 1:, :]
    w = np.where(mask, np.asarray(weights, dtype=np.float64)[..., 1:, :], 0.0)
    total = w.sum()
    if not mask.any() or total <= 0:
        raise NoSupervisionError("loss mask selects no supervised cells")
    labels = grid[..., 1:, :]
    logp = log_softmax(logits[..., :-1, :, :])
    nll = -np.take_along_axis(logp, labels[..., None], axis=-1)[..., 0]
    per_cell = np.where(mask, nll, 0.0)
    loss = float((w * per_cell).sum() / total)
    if not return_grad:
        return loss, per_cell
    grad = np.zeros(logits.shape, dtype=np.float64)
    g = np.exp(logp)
    np.put_along_axis(g, labels[..., None], np.take_along_axis(g, labels[..., None], -1) - 1.0, -1)
    grad[..., :-1, :, :] = g * (w / total)[..., None]
    return loss, per_cell, grad.astype(logits.dtype, copy=False)
