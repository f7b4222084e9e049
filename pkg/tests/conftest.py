import itertools

import numpy as np
import pytest


def finite_difference(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar f at x (x is perturbed in place and restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + step
        fp = f()
        x[i] = old - step
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * step)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b)) / max(1e-8, np.max(np.abs(a)), np.max(np.abs(b))))


def all_partitions(n: int, k: int):
    """Every labeling of n items into exactly k non-empty clusters (canonical form)."""
    for labels in itertools.product(range(k), repeat=n):
        if labels[0] != 0 or len(set(labels)) != k:
            continue
        # canonical: first occurrence order 0,1,2,...
        seen = []
        for lab in labels:
            if lab not in seen:
                seen.append(lab)
        if seen == list(range(k)):
            yield np.array(labels)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# Acceptance results, printed once at the end of the session.
ACCEPTANCE: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
