from __future__ import annotations

import numpy as np

from ..errors import InputError
from .rng import Rng


def kmeans_sse(points: np.ndarray, labels: np.ndarray, centers: np.ndarray) -> float:
    """Within-cluster sum of squared distances."""
    return float(np.sum((points - centers[labels]) ** 2))


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _seed_centers(points: np.ndarray, k: int, rng: Rng) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0.0:
            u = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(d2), u, side="right"))
            idx = min(idx, n - 1)
        else:
            # every point coincides with a center: take the lowest unused index
            idx = next(i for i in range(n) if i not in chosen)
        chosen.append(idx)
        d2 = np.minimum(d2, np.sum((points - points[idx]) ** 2, axis=1))
    return points[chosen].copy()


def kmeans(points, k: int, rng: Rng, max_iter: int = 100, return_history: bool = False):
    """Lloyd's k-means with k-means++ seeding.

    Ties in assignment go to the lowest cluster index. A cluster that empties
    is reseeded with the point farthest from its current center. Stops when
    assignments stop changing or after ``max_iter`` iterations.

    With ``return_history`` the per-iteration SSE list is returned as well.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if k < 1 or n < k:
        raise InputError(f"kmeans needs n >= k >= 1, got n={n}, k={k}")
    centers = _seed_centers(x, k, rng)
    labels = np.argmin(_sq_dists(x, centers), axis=1)
    history = []
    for _ in range(max_iter):
        labels, centers = _fill_empty(x, labels, centers, k)
        history.append(kmeans_sse(x, labels, centers))
        centers = np.stack([x[labels == j].mean(axis=0) for j in range(k)])
        new = np.argmin(_sq_dists(x, centers), axis=1)
        if np.array_equal(new, labels):
            break
        labels = new
    labels, centers = _fill_empty(x, labels, centers, k)
    history.append(kmeans_sse(x, labels, centers))
    if return_history:
        return labels, history
    return labels


def _fill_empty(x, labels, centers, k):
    labels = labels.copy()
    centers = centers.copy()
    for j in range(k):
        if np.any(labels == j):
            continue
        d2 = np.sum((x - centers[labels]) ** 2, axis=1)
        # only steal from clusters that keep at least one member
        counts = np.bincount(labels, minlength=k)
        d2[counts[labels] <= 1] = -1.0
        far = int(np.argmax(d2))
        labels[far] = j
        centers[j] = x[far]
    return labels, centers
