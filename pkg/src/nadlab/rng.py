"""Splittable, counter-based random streams.

Built on Philox: the (seed, stream) pair is the 128-bit key, so equal pairs
replay bit-identical sequences and distinct stream ids give statistically
independent streams.  Child streams are derived by hashing, never by
sharing generator state, which keeps parallel work reproducible.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


class Rng:
    """One random stream, identified by (seed, stream)."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        self._gen = np.random.Generator(
            np.random.Philox(key=np.array([self.seed, self.stream], dtype=np.uint64))
        )

    def child(self, index: int) -> "Rng":
        """Derive an independent stream; deterministic in (stream, index)."""
        new_stream = _splitmix64(_splitmix64(self.stream) ^ ((index + 1) & _MASK64))
        return Rng(self.seed, new_stream)

    def gaussian(self, shape, std: float = 1.0) -> np.ndarray:
        """I.i.d. zero-mean normal draws; std = 0 gives exact zeros."""
        if std < 0:
            raise ValueError("std must be nonnegative")
        return self._gen.standard_normal(size=shape) * std

    def signs(self, n: int) -> np.ndarray:
        """Uniform labels in {-1, +1}."""
        return self._gen.integers(0, 2, size=n) * 2.0 - 1.0

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def uniform(self, low: float, high: float, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size=size)

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream={self.stream})"
