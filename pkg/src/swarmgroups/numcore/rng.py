from __future__ import annotations

import numpy as np


class Rng:
    """Seeded random stream.

    Backed by numpy's PCG64 generator. ``counter`` counts draw calls so a
    stream position can be logged; ``child`` derives an independent stream
    keyed by integers, so sub-tasks never share a generator.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.counter = 0
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed)))

    def child(self, *keys: int) -> "Rng":
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]])
        return Rng(int(ss.generate_state(1, dtype=np.uint64)[0]))

    def random(self, size=None):
        self.counter += 1
        return self._gen.random(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        self.counter += 1
        return self._gen.uniform(low, high, size)

    def normal(self, size=None):
        self.counter += 1
        return self._gen.standard_normal(size)

    def integers(self, low, high=None, size=None):
        self.counter += 1
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        self.counter += 1
        return self._gen.permutation(n)
