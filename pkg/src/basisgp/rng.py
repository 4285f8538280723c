"""Deterministic, portable random number generation.

Every random draw in the package flows from a single 64-bit seed through
named substreams ("init", "noise", "shuffle", "split", ...), so changing
how one consumer draws numbers never perturbs the others. The generator
is xoshiro256** seeded through splitmix64: a small, fully specified
algorithm whose integer outputs reproduce bit-for-bit on any platform,
unlike library generators whose stream identity may change between
versions.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(state: int):
    """Advance a splitmix64 state; returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


def _fnv1a(text: str) -> int:
    """FNV-1a hash of a stream label, used to derive substream seeds."""
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


class Xoshiro256StarStar:
    """xoshiro256** generator with uniform/normal/permutation helpers."""

    def __init__(self, seed: int):
        state = seed & _MASK64
        words = []
        for _ in range(4):
            state, word = _splitmix64(state)
            words.append(word)
        self._s = words
        self._spare_normal = None

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s[1] << 17) & _MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def uniform(self, low: float = 0.0, high: float = 1.0) -> float:
        """Uniform double in [low, high) with 53-bit resolution."""
        u = (self.next_u64() >> 11) * 2.0**-53
        return low + (high - low) * u

    def uniforms(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return np.array([self.uniform(low, high) for _ in range(n)], dtype=np.float64)

    def normal(self) -> float:
        """Standard normal via Box-Muller, caching the paired deviate."""
        if self._spare_normal is not None:
            z = self._spare_normal
            self._spare_normal = None
            return z
        # 1 - u lies in (0, 1], keeping the log argument strictly positive.
        u1 = 1.0 - self.uniform()
        u2 = self.uniform()
        radius = math.sqrt(-2.0 * math.log(u1))
        theta = 2.0 * math.pi * u2
        self._spare_normal = radius * math.sin(theta)
        return radius * math.cos(theta)

    def normals(self, n: int) -> np.ndarray:
        return np.array([self.normal() for _ in range(n)], dtype=np.float64)

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) via bitmask rejection."""
        if n <= 0:
            raise ValueError("randbelow requires n >= 1")
        bits = (n - 1).bit_length()
        if bits == 0:
            return 0
        while True:
            r = self.next_u64() >> (64 - bits)
            if r < n:
                return r

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n)."""
        perm = np.arange(n, dtype=np.int64)
        for i in range(n - 1, 0, -1):
            j = self.randbelow(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm


def substream(seed: int, label: str) -> Xoshiro256StarStar:
    """Independent generator for (seed, label).

    The label is folded into the seed with FNV-1a before splitmix64
    expansion, so streams for different labels share no state.
    """
    return Xoshiro256StarStar((seed & _MASK64) ^ _fnv1a(label))
