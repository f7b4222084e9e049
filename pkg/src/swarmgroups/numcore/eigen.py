from __future__ import annotations

import numpy as np

from ..errors import DimensionError, NumericalError


def _round_robin(n: int):
    """Yield n-1 (or n) rounds of disjoint index pairs covering every pair once."""
    players = list(range(n)) + ([-1] if n % 2 else [])
    m = len(players)
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p >= 0 and q >= 0]
        yield np.array([p for p, _ in pairs]), np.array([q for _, q in pairs])
        players = [players[0], players[-1]] + players[1:-1]


def sym_eigen(m, tol: float = 1e-15, max_sweeps: int = 60):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    The input is symmetrized as (m + m.T)/2 first. Each sweep visits every
    off-diagonal pair once, grouped into rounds of disjoint pairs so that a
    whole round is applied with vectorized row/column updates.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues ascending and the
    matching unit eigenvectors as columns.
    """
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"sym_eigen needs a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericalError("sym_eigen input contains non-finite entries")
    n = a.shape[0]
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    if n == 0:
        return np.zeros(0), v
    scale = np.linalg.norm(a)
    rounds = list(_round_robin(n)) if n > 1 else []
    for _ in range(max_sweeps):
        off = np.sqrt(max(np.sum(a * a) - np.sum(np.diag(a) ** 2), 0.0))
        if off <= tol * scale or scale == 0.0:
            break
        for p, q in rounds:
            apq = a[p, q]
            keep = apq != 0.0
            if not keep.any():
                continue
            p, q, apq = p[keep], q[keep], apq[keep]
            diff = a[q, q] - a[p, p]
            # |theta| beyond 1e150 would overflow theta**2; t -> 1/(2 theta) there
            big = np.abs(diff) > 1e150 * np.abs(apq)
            theta = diff / (2.0 * np.where(big, 1.0, apq))
            t = np.where(
                big,
                apq / np.where(big, diff, 1.0),
                np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.sqrt(theta * theta + 1.0)),
            )
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            rp, rq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * rp - s[:, None] * rq
            a[q, :] = s[:, None] * rp + c[:, None] * rq
            cp, cq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = cp * c - cq * s
            a[:, q] = cp * s + cq * c
            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = vp * c - vq * s
            v[:, q] = vp * s + vq * c
            a[p, q] = 0.0
            a[q, p] = 0.0
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]
