"""Portable SplitMix64 random streams.

Every random draw in the engine is derived from a single 64-bit master seed
through SplitMix64 (Steele, Lea & Flood, "Fast splittable pseudorandom number
generators", OOPSLA 2014). The generator is a counter passed through a fixed
64-bit finalizer, so a sub-stream can be addressed directly by index without
advancing any shared state:

    derive_seed(master, i) == i-th output of SplitMix64(master)

That property gives per-entry procgen seeds and per-beam LiDAR noise that are
independent of evaluation order and identical on every platform.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15

_U64 = np.uint64
_GAMMA_U64 = _U64(GOLDEN_GAMMA)


def mix64(z: int) -> int:
    """SplitMix64 output finalizer for a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix64_array(z: np.ndarray) -> np.ndarray:
    """Vectorised :func:`mix64` over a uint64 array (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)
    return z ^ (z >> _U64(31))


def derive_seed(master: int, *counters: int) -> int:
    """Address a sub-stream seed by one or more counters."""
    seed = master & MASK64
    for c in counters:
        seed = mix64(seed + ((c + 1) * GOLDEN_GAMMA))
    return seed


def _to_unit(u: np.ndarray) -> np.ndarray:
    # top 53 bits -> [0, 1)
    return (u >> _U64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def hashed_uniforms(seed: int, counters: np.ndarray) -> np.ndarray:
    """Uniform [0, 1) draws, one per counter, from stream ``seed``."""
    c = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        state = _U64(seed & MASK64) + (c + _U64(1)) * _GAMMA_U64
    return _to_unit(mix64_array(state))


def hashed_normals(seed: int, counters: np.ndarray) -> np.ndarray:
    """Standard normal draws (Box-Muller), one per counter."""
    c = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        u1 = hashed_uniforms(seed, c * _U64(2))
        u2 = hashed_uniforms(seed, c * _U64(2) + _U64(1))
    return np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)


class SplitMix64:
    """Sequential SplitMix64 stream with the handful of draws procgen needs."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return mix64(self.state)

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def integer(self, n: int) -> int:
        """Unbiased integer in ``[0, n)`` by rejection."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = ((1 << 64) // n) * n
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def normal(self) -> float:
        u1 = self.random()
        u2 = self.random()
        return math.sqrt(-2.0 * math.log1p(-u1)) * math.cos(2.0 * math.pi * u2)

    def sample(self, items: list, k: int) -> list:
        """``k`` distinct items, order given by a partial Fisher-Yates shuffle."""
        pool = list(items)
        if k > len(pool):
            raise ValueError(f"cannot sample {k} from {len(pool)} items")
        for i in range(k):
            j = i + self.integer(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]
