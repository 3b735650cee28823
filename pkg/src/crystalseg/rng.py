"""splitmix64-seeded xoshiro256** generators.

``Xoshiro256`` is the scalar reference stream. ``RowStreams`` runs one
independent xoshiro256** stream per image row in lock-step with numpy,
which is how bulk per-pixel noise is drawn.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step: returns (new state, output)."""
    state = (state + GOLDEN) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256:
    def __init__(self, seed: int = 0, *, state: tuple[int, int, int, int] | None = None):
        if state is None:
            sm = seed & MASK64
            words = []
            for _ in range(4):
                sm, out = splitmix64(sm)
                words.append(out)
            state = tuple(words)
        if not any(state):
            raise ValueError("xoshiro256** state must not be all zero")
        self.s = list(state)

    def next_u64(self) -> int:
        s = self.s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        return lo + (hi - lo) * ((self.next_u64() >> 11) * 2.0 ** -53)

    def integer(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi]."""
        return lo + min(int(self.uniform() * (hi - lo + 1)), hi - lo)

    def normal(self) -> float:
        u1 = 1.0 - self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


_U = np.uint64


class RowStreams:
    """``n`` xoshiro256** streams, stream ``i`` seeded by splitmix64 from ``seed + i*GOLDEN``."""

    def __init__(self, seed: int, n: int):
        sm = (np.uint64(seed & MASK64) + np.arange(n, dtype=np.uint64) * _U(GOLDEN))
        words = []
        for _ in range(4):
            sm = sm + _U(GOLDEN)
            z = sm.copy()
            z = (z ^ (z >> _U(30))) * _U(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> _U(27))) * _U(0x94D049BB133111EB)
            words.append(z ^ (z >> _U(31)))
        self.s0, self.s1, self.s2, self.s3 = words

    @staticmethod
    def _rotl(x, k):
        return (x << _U(k)) | (x >> _U(64 - k))

    def next_u64(self) -> np.ndarray:
        s0, s1, s2, s3 = self.s0, self.s1, self.s2, self.s3
        result = self._rotl(s1 * _U(5), 7) * _U(9)
        t = s1 << _U(17)
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        self.s3 = self._rotl(s3, 45)
        return result

    def uniform(self) -> np.ndarray:
        return (self.next_u64() >> _U(11)).astype(np.float64) * 2.0 ** -53

    def normal_grid(self, width: int) -> np.ndarray:
        """``(n, width)`` standard normals, Box-Muller cosine branch, column by column."""
        out = np.empty((self.s0.size, width))
        for col in range(width):
            u1 = 1.0 - self.uniform()
            u2 = self.uniform()
            out[:, col] = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return out
