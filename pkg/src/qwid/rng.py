"""SplitMix64, vectorized.

Every random draw in the package goes through this generator so that a seed
reproduces datasets, initial weights and batch orders bit for bit on any
platform. The n-th output for state ``s`` is ``mix(s + n * 0x9E3779B97F4A7C15)``
with the standard SplitMix64 finalizer (xor-shift 30/27/31, multipliers
``0xBF58476D1CE4E5B9`` and ``0x94D049BB133111EB``), all modulo 2**64.
"""
from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    def __init__(self, seed: int):
        self.state = int(seed) & _MASK

    def spawn(self, key: int) -> "SplitMix64":
        """Independent child stream derived from this seed and ``key``."""
        z = _mix(np.array([(self.state ^ (int(key) * 0xD1B54A32D192ED03)) & _MASK], np.uint64))
        return SplitMix64(int(z[0]))

    def next_u64(self, n: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            steps = np.arange(1, n + 1, dtype=np.uint64)
            z = np.uint64(self.state) + steps * _GOLDEN
            self.state = (self.state + n * int(_GOLDEN)) & _MASK
            return _mix(z)

    def uniform(self, shape, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / 2**53)
        return (lo + (hi - lo) * u).reshape(shape)

    def normal(self, shape) -> np.ndarray:
        """Standard normal draws via Box-Muller (one cosine branch per pair)."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape))
        u1 = self.uniform(n)
        u2 = self.uniform(n)
        return (np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)).reshape(shape)

    def integers(self, lo: int, hi: int, n: int) -> np.ndarray:
        return lo + (self.next_u64(n) % np.uint64(hi - lo)).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.next_u64(n), kind="stable")
