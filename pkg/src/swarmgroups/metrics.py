"""Label-permutation-invariant clustering agreement scores."""
from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InputError


def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1) / 2.0


def _pair(z, z_hat, min_len: int):
    z, z_hat = np.asarray(z), np.asarray(z_hat)
    if z.shape != z_hat.shape or z.ndim != 1:
        raise InputError(f"label vectors must have equal 1-D shapes, got {z.shape} and {z_hat.shape}")
    if z.size < min_len:
        raise InputError(f"need at least {min_len} labels, got {z.size}")
    return z, z_hat


def _first_occurrence_codes(labels) -> np.ndarray:
    """Integer codes numbered by first appearance, so any relabeling yields the same codes."""
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty(first.size, dtype=np.int64)
    rank[np.argsort(first)] = np.arange(first.size)
    return rank[inverse.ravel()]


@dataclass(frozen=True)
class Contingency:
    table: np.ndarray  # true clusters x predicted clusters
    a: np.ndarray
    b: np.ndarray
    n: int

    @classmethod
    def build(cls, z, z_hat) -> "Contingency":
        zi, zj = _first_occurrence_codes(z), _first_occurrence_codes(z_hat)
        table = np.zeros((zi.max() + 1, zj.max() + 1), dtype=np.int64)
        np.add.at(table, (zi, zj), 1)
        return cls(table, table.sum(axis=1), table.sum(axis=0), int(table.sum()))


def ari(z, z_hat) -> float:
    z, z_hat = _pair(z, z_hat, 2)
    c = Contingency.build(z, z_hat)
    index = _comb2(c.table).sum()
    sa, sb = _comb2(c.a).sum(), _comb2(c.b).sum()
    expected = sa * sb / _comb2(c.n)
    denom = 0.5 * (sa + sb) - expected
    if denom == 0:
        return 1.0 if _same_partition(c) else 0.0
    return float((index - expected) / denom)


def _same_partition(c: Contingency) -> bool:
    t = c.table
    return t.shape[0] == t.shape[1] and np.all((t > 0).sum(axis=0) == 1) and np.all((t > 0).sum(axis=1) == 1)


def nmi(z, z_hat) -> float:
    """2 I(Z; Z_hat) / (H(Z) + H(Z_hat)), natural log, 0 log 0 = 0."""
    z, z_hat = _pair(z, z_hat, 1)
    c = Contingency.build(z, z_hat)
    p = c.table / c.n
    pi, pj = p.sum(axis=1), p.sum(axis=0)
    nz = p > 0
    mi = float(np.sum(p[nz] * np.log(p[nz] / np.outer(pi, pj)[nz])))
    hz = -float(np.sum(pi * np.log(pi)))
    hh = -float(np.sum(pj * np.log(pj)))
    if hz + hh == 0:
        return 1.0
    return max(0.0, min(1.0, 2.0 * mi / (hz + hh)))


def pairwise_f(z, z_hat) -> tuple[float, float, float]:
    """Pairwise (precision, recall, F) over unordered agent pairs."""
    z, z_hat = _pair(z, z_hat, 2)
    c = Contingency.build(z, z_hat)
    tp = _comb2(c.table).sum()
    pred_pos = _comb2(c.b).sum()
    true_pos = _comb2(c.a).sum()
    precision = float(tp / pred_pos) if pred_pos > 0 else 0.0
    recall = float(tp / true_pos) if true_pos > 0 else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, float(f)


@dataclass(frozen=True)
class MetricsReport:
    ari: float
    nmi: float
    f: float
    precision: float
    recall: float

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(z, z_hat) -> MetricsReport:
    p, r, f = pairwise_f(z, z_hat)
    return MetricsReport(ari=ari(z, z_hat), nmi=nmi(z, z_hat), f=f, precision=p, recall=r)


def best_of_permutation_check(z, z_hat) -> dict:
    """Evaluate under every relabeling of ``z_hat`` and report the largest deviation."""
    z, z_hat = _pair(z, z_hat, 2)
    labels = list(np.unique(z_hat))
    if len(labels) > 6:
        raise InputError("permutation check limited to <= 6 predicted labels")
    base = evaluate(z, z_hat).to_dict()
    worst = 0.0
    count = 0
    for perm in itertools.permutations(labels):
        mapping = dict(zip(labels, perm))
        rep = evaluate(z, np.array([mapping[x] for x in z_hat])).to_dict()
        worst = max(worst, max(abs(rep[k] - base[k]) for k in base))
        count += 1
    return {"report": base, "permutations": count, "max_deviation": worst, "invariant": worst <= 1e-12}
