"""Deterministic random number generation.

Every stochastic step in the project (synthetic data, weight init, shuffles)
draws from the SplitMix64 generator so that datasets and training runs are
bit-reproducible from a single integer seed, independent of Python's or
NumPy's own RNG state.

SplitMix64 (public-domain constants):

    state  = (state + 0x9E3779B97F4A7C15) mod 2^64
    z      = state
    z      = ((z XOR (z >> 30)) * 0xBF58476D1CE4E5B9) mod 2^64
    z      = ((z XOR (z >> 27)) * 0x94D049BB133111EB) mod 2^64
    output = z XOR (z >> 31)

Derived draws are defined in terms of the raw 64-bit stream:

* float64 in [0, 1): top 53 bits, `next_u64() >> 11` times 2^-53.
* integer below n:   `next_u64() % n` (modulo; the bias is negligible for
  the small n used here and the rule is portable).
* shuffle:           Fisher-Yates from the last index down, `j = below(i+1)`.
* substreams:        `fork(k)` seeds a child generator with
  `mix64(seed + (k+1) * GOLDEN)`, decoupling per-sample streams from
  dataset-level draw order.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a 64-bit integer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


class Rng:
    """SplitMix64 stream with scalar and vectorized draw paths."""

    def __init__(self, seed: int):
        self.seed = seed & MASK64
        self._state = self.seed

    def next_u64(self) -> int:
        self._state = (self._state + GOLDEN) & MASK64
        return mix64(self._state)

    def next_f64(self) -> float:
        """Uniform float64 in [0, 1)."""
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform(self, lo: float, hi: float) -> float:
        return lo + self.next_f64() * (hi - lo)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError("below() requires n >= 1")
        return self.next_u64() % n

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi] inclusive."""
        return lo + self.below(hi - lo + 1)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]

    def fork(self, k: int) -> "Rng":
        """Independent child stream number k; stable under draw-order changes
        in sibling streams."""
        return Rng(mix64((self.seed + (k + 1) * GOLDEN) & MASK64))

    def u64_array(self, n: int) -> np.ndarray:
        """Next n raw draws as uint64, bit-identical to n next_u64() calls."""
        steps = np.arange(1, n + 1, dtype=np.uint64)
        z = np.uint64(self._state) + steps * np.uint64(GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        z = z ^ (z >> np.uint64(31))
        self._state = (self._state + n * GOLDEN) & MASK64
        return z

    def f64_array(self, n: int) -> np.ndarray:
        """Next n uniform floats in [0, 1), vectorized."""
        return (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def int_array(self, n: int, lo: int, hi: int) -> np.ndarray:
        """Next n uniform integers in [lo, hi] inclusive, vectorized."""
        span = np.uint64(hi - lo + 1)
        return (self.u64_array(n) % span).astype(np.int64) + lo
