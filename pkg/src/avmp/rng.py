"""Portable deterministic PRNG used by every randomised component.

Standard-library generators are deliberately avoided: their streams are not
pinned across Python versions, and golden files here must be byte-stable
across platforms and releases.  The generator is PCG-32 (pcg_setseq_64 /
xsh_rr variant), seeded through SplitMix64 so that a (seed, stream tag)
pair always lands on an independent, reproducible stream.
"""

from __future__ import annotations

import math

_MASK64 = (1 << 64) - 1
_MASK32 = (1 << 32) - 1
_PCG_MULT = 6364136223846793005


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_stream(seed: int, tag: str) -> int:
    """Mix a 64-bit seed with a purpose tag into an independent stream seed."""
    h = seed & _MASK64
    for ch in tag.encode("utf-8"):
        h = _splitmix64(h ^ ch)
    return h


class Pcg32:
    """PCG-32 generator: 64-bit state, 32-bit output, fully portable."""

    __slots__ = ("_state", "_inc", "_spare_normal")

    def __init__(self, seed: int, tag: str = ""):
        mixed = derive_stream(seed, tag) if tag else seed & _MASK64
        seq = _splitmix64(mixed ^ 0xDA3E39CB94B95BDB)
        self._inc = ((seq << 1) | 1) & _MASK64
        self._state = 0
        self._next_u32()
        self._state = (self._state + _splitmix64(mixed)) & _MASK64
        self._next_u32()
        self._spare_normal: float | None = None

    def _next_u32(self) -> int:
        old = self._state
        self._state = (old * _PCG_MULT + self._inc) & _MASK64
        xorshifted = (((old >> 18) ^ old) >> 27) & _MASK32
        rot = old >> 59
        return ((xorshifted >> rot) | (xorshifted << ((-rot) & 31))) & _MASK32

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi], inclusive, bias-free via rejection."""
        if hi < lo:
            raise ValueError(f"empty range [{lo}, {hi}]")
        span = hi - lo + 1
        if span == 1:
            return lo
        # Rejection sampling over the largest multiple of span below 2^32.
        limit = (_MASK32 + 1) - ((_MASK32 + 1) % span)
        while True:
            draw = self._next_u32()
            if draw < limit:
                return lo + (draw % span)

    def random(self) -> float:
        """Uniform float in [0, 1) with 53-bit resolution."""
        hi = self._next_u32() >> 5   # 27 bits
        lo = self._next_u32() >> 6   # 26 bits
        return (hi * 67108864.0 + lo) * (1.0 / 9007199254740992.0)

    def normal(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        """Gaussian draw via Box-Muller (deterministic, no libm variance)."""
        if self._spare_normal is not None:
            z = self._spare_normal
            self._spare_normal = None
            return mu + sigma * z
        while True:
            u1 = self.random()
            if u1 > 1e-300:
                break
        u2 = self.random()
        r = math.sqrt(-2.0 * math.log(u1))
        theta = 2.0 * math.pi * u2
        self._spare_normal = r * math.sin(theta)
        return mu + sigma * r * math.cos(theta)

    def choice_index(self, n: int) -> int:
        """Uniform index into a sequence of length n."""
        if n <= 0:
            raise ValueError("empty sequence")
        return self.randint(0, n - 1)
