"""Deterministic pseudo-randomness for the whole package.

Every random decision (token sampling, parameter init, synthetic data,
shuffling) flows through the splitmix64 generator below so that equal seeds
produce bit-identical results across runs, platforms and languages. The
sequence is pinned: do not change the constants or the draw conventions
without bumping every format version that depends on them.

Conventions layered on the raw 64-bit stream:
  * uniform double in [0, 1): top 53 bits / 2**53
  * bounded integer in [0, n): next_u64() % n
  * gaussian: Box-Muller, consuming exactly two uniforms per value and
    keeping only the cosine branch (no cached spare)
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


class Rng:
    """splitmix64 stream. One instance is owned by one task at a time."""

    __slots__ = ("state",)

    def __init__(self, seed: int) -> None:
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        return (z ^ (z >> 31)) & _MASK64

    def next_float(self) -> float:
        """Uniform in [0, 1)."""
        return (self.next_u64() >> 11) * 2.0**-53

    def next_below(self, bound: int) -> int:
        """Uniform integer in [0, bound)."""
        if bound <= 0:
            raise ValueError(f"bound must be positive, got {bound}")
        return self.next_u64() % bound

    def next_gaussian(self) -> float:
        """Standard normal draw (two uniforms consumed)."""
        return float(self.gaussian_array((1,))[0])

    # Vectorized equivalents. splitmix64's state after n steps is
    # state0 + n*gamma, so a block of outputs is computable in closed form;
    # these advance the stream exactly as n scalar calls would.

    def fill_u64(self, n: int) -> np.ndarray:
        if n < 0:
            raise ValueError("n must be >= 0")
        steps = np.arange(1, n + 1, dtype=np.uint64)
        z = np.uint64(self.state) + np.uint64(_GAMMA) * steps
        self.state = (self.state + n * _GAMMA) & _MASK64
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))

    def fill_floats(self, n: int) -> np.ndarray:
        return (self.fill_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def gaussian_array(self, shape, sigma: float = 1.0) -> np.ndarray:
        """Array of N(0, sigma^2) draws in row-major draw order."""
        n = int(np.prod(shape)) if shape else 1
        u = self.fill_floats(2 * n)
        u1, u2 = u[0::2], u[1::2]
        out = np.sqrt(-2.0 * np.log(1.0 - u1)) * np.cos(2.0 * np.pi * u2)
        return (sigma * out).reshape(shape)


def mix_seed(*parts: int) -> int:
    """Collapse integers into one 64-bit seed.

    Chains each part through the splitmix64 output function, so derived
    streams (per-sample, per-epoch) are decorrelated from each other and
    from the parent seed.
    """
    state = _GAMMA
    for p in parts:
        state = (state ^ (p & _MASK64)) & _MASK64
        state = (state + _GAMMA) & _MASK64
        z = state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        state = (z ^ (z >> 31)) & _MASK64
    return state


def hash_string(s: str) -> int:
    """Stable 64-bit FNV-1a hash, for deriving per-sample seeds from ids."""
    h = 0xCBF29CE484222325
    for b in s.encode("utf-8"):
        h ^= b
        h = (h * 0x100000001B3) & _MASK64
    return h
