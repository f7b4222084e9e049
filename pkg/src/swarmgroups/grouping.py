"""Group inference by normalized spectral clustering of attention affinities."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cvae import TrajectoryModel, time_block_average
from .errors import InputError
from .numcore import Rng, kmeans, kmeans_sse, sym_eigen
from .numcore import autodiff as ad
from .swarmsim import Sequence, window

MODES = ("second_order", "first_order_ablation")
ZERO_DEGREE_AFFINITY = 1e-8
KMEANS_RESTARTS = 10


@dataclass(frozen=True)
class SimilarityMatrix:
    s: np.ndarray
    source: str


@dataclass(frozen=True)
class GroupAssignment:
    labels: np.ndarray
    k: int
    embedding: np.ndarray

    def to_dict(self, t0: int, mode: str) -> dict:
        return {"t0": int(t0), "k": int(self.k), "labels": [int(x) for x in self.labels], "mode": mode}


def build_similarity(a, n_agents: int, mode: str = "second_order") -> SimilarityMatrix:
    """Time-block-averaged, symmetrized, nonnegative N x N affinity."""
    if mode not in MODES:
        raise InputError(f"unknown mode {mode!r}; expected one of {MODES}")
    s = np.asarray(time_block_average(ad.value(a), n_agents))
    s = 0.5 * (s + s.T)
    return SimilarityMatrix(np.maximum(s, 0.0), mode)


def normalized_laplacian(s: np.ndarray) -> np.ndarray:
    """I - D^-1/2 S D^-1/2; rows with zero degree first get a tiny uniform affinity."""
    s = np.array(s, dtype=np.float64)
    n = s.shape[0]
    deg = s.sum(axis=1)
    for i in np.flatnonzero(deg <= 0):
        s[i, :] = np.where(np.arange(n) == i, s[i, :], ZERO_DEGREE_AFFINITY)
        s[:, i] = s[i, :]
    deg = s.sum(axis=1)
    inv = 1.0 / np.sqrt(deg)
    return np.eye(n) - inv[:, None] * s * inv[None, :]


def spectral_cluster(sim: SimilarityMatrix | np.ndarray, k: int, rng: Rng, restarts: int = KMEANS_RESTARTS) -> GroupAssignment:
    s = sim.s if isinstance(sim, SimilarityMatrix) else np.asarray(sim, dtype=np.float64)
    n = s.shape[0]
    if k < 1 or k > n:
        raise InputError(f"k must lie in 1..{n}, got {k}")
    _, vecs = sym_eigen(normalized_laplacian(s))
    u = vecs[:, :k]
    norms = np.linalg.norm(u, axis=1, keepdims=True)
    u = np.where(norms > 0, u / np.where(norms > 0, norms, 1.0), 0.0)
    # best of several seeded restarts; a single k-means++ run can land in a local optimum
    best, best_sse = None, np.inf
    for r in range(max(1, restarts)):
        labels = kmeans(u, k, rng.child(r))
        centers = np.array([u[labels == c].mean(axis=0) if np.any(labels == c) else np.zeros(k) for c in range(k)])
        sse = kmeans_sse(u, labels, centers)
        if sse < best_sse - 1e-12:
            best, best_sse = labels, sse
    return GroupAssignment(best, k, u)


def eigengap_k(sim: SimilarityMatrix, k_max: int | None = None) -> int:
    """Diagnostic group count: position of the largest gap among the smallest Laplacian eigenvalues."""
    w, _ = sym_eigen(normalized_laplacian(sim.s))
    k_max = min(k_max or len(w) - 1, len(w) - 1)
    if k_max < 1:
        return 1
    return int(np.argmax(np.diff(w[: k_max + 1]))) + 1


def window_affinity(model: TrajectoryModel, seq: Sequence, t0: int, mode: str = "second_order") -> SimilarityMatrix:
    X, _ = window(seq, t0, model.cfg.H, 0)
    enc = model.encode(X)
    a = enc.a2 if mode == "second_order" else enc.a1
    return build_similarity(a, enc.n_agents, mode)


def infer_groups(model: TrajectoryModel, seq: Sequence, t0: int, k: int, mode: str = "second_order", seed: int = 0) -> GroupAssignment:
    """Encode the observation window ending at t0 and cluster its affinity; never reads labels."""
    return spectral_cluster(window_affinity(model, seq, t0, mode), k, Rng(seed))


def position_kmeans(seq: Sequence, t0: int, k: int, seed: int = 0) -> np.ndarray:
    """Naive baseline: k-means on raw positions at t0."""
    return kmeans(seq.positions[t0], k, Rng(seed))


def groups_overlap(positions: np.ndarray, labels) -> bool:
    """Evaluation-only test: some pair of true groups has centroid distance below the sum of their RMS radii."""
    pos, labels = np.asarray(positions, dtype=np.float64), np.asarray(labels)
    groups = np.unique(labels)
    cents = [pos[labels == g].mean(axis=0) for g in groups]
    radii = [np.sqrt(((pos[labels == g] - c) ** 2).sum(axis=1).mean()) for g, c in zip(groups, cents)]
    for i in range(len(groups)):
        for j in range(i + 1, len(groups)):
            if np.linalg.norm(cents[i] - cents[j]) < radii[i] + radii[j]:
                return True
    return False
