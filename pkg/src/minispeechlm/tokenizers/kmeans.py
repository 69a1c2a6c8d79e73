from __future__ import annotations

import numpy as np

N_ITER = 25


def squared_distances(x: np.ndarray, centroids: np.ndarray, chunk: int = 4096) -> np.ndarray:
    # Explicit differences rather than the expanded norm form: a point equal to
    # a centroid must sit at distance exactly 0 for the tie rules to hold.
    out = np.empty((len(x), len(centroids)))
    for start in range(0, len(x), chunk):
        diff = x[start : start + chunk, None, :] - centroids[None, :, :]
        out[start : start + chunk] = np.einsum("nkd,nkd->nk", diff, diff)
    return out


def nearest(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # np.argmin returns the first minimum: ties go to the lowest centroid index.
    return np.argmin(squared_distances(x, centroids), axis=1)


def farthest_point_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    chosen = [int(rng.integers(len(x)))]
    best = squared_distances(x, x[chosen])[:, 0]
    for _ in range(1, k):
        i = int(np.argmax(best))
        chosen.append(i)
        best = np.minimum(best, squared_distances(x, x[i : i + 1])[:, 0])
    return x[chosen].copy()


def kmeans(x: np.ndarray, k: int, seed: int, n_iter: int = N_ITER) -> np.ndarray:
    """Lloyd iterations from a seeded farthest-point start.

    An empty cluster is moved onto the point farthest from its assigned
    centroid. The loop ends on a mean update, so every centroid is the mean
    of the points last assigned to it (or a reseeded data point).
    """
    x = np.asarray(x, dtype=np.float64)
    if len(x) < k:
        raise ValueError(f"need at least {k} frames to fit {k} centroids, got {len(x)}")
    rng = np.random.default_rng(seed)
    centroids = farthest_point_init(x, k, rng)
    for _ in range(n_iter):
        d = squared_distances(x, centroids)
        assign = np.argmin(d, axis=1)
        point_err = d[np.arange(len(x)), assign]
        counts = np.bincount(assign, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, assign, x)
        filled = counts > 0
        centroids[filled] = sums[filled] / counts[filled, None]
        for j in np.flatnonzero(~filled):
            far = int(np.argmax(point_err))
            centroids[j] = x[far]
            point_err[far] = -1.0
    return centroids
