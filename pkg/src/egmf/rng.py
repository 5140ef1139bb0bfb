"""Deterministic pseudo-random state built on the splitmix64 generator.

Every stochastic choice in the package (parameter init, data synthesis,
shuffling) flows through :class:`RngState` so that a fixed seed gives
bit-identical runs. The generator is counter-based: draw ``i`` is
``mix64(seed + (i+1) * GOLDEN)``, which lets large batches be produced
vectorized while staying identical to one-at-a-time draws.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """splitmix64 finalizer on a 64-bit integer."""
    z &= _MASK64
    z = (z ^ (z >> 30)) * _MIX1 & _MASK64
    z = (z ^ (z >> 27)) * _MIX2 & _MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= np.uint64(_MIX1)
    z ^= z >> np.uint64(27)
    z *= np.uint64(_MIX2)
    z ^= z >> np.uint64(31)
    return z


class RngState:
    """splitmix64 stream identified by (seed, draw counter).

    Identical seeds give bit-identical draw sequences regardless of whether
    values are requested one at a time or in vectorized blocks.
    """

    algorithm = "splitmix64"

    def __init__(self, seed: int, _counter: int = 0):
        self.seed = int(seed) & _MASK64
        self._counter = _counter

    def derive(self, tag: str) -> "RngState":
        """Independent child stream, deterministic in (seed, tag)."""
        h = self.seed
        for ch in tag:
            h = mix64(h ^ ord(ch))
        return RngState(h)

    def next_uint64(self) -> int:
        self._counter += 1
        return mix64((self.seed + self._counter * _GOLDEN) & _MASK64)

    def _next_block(self, n: int) -> np.ndarray:
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        base = idx * np.uint64(_GOLDEN) + np.uint64(self.seed)
        return _mix64_array(base)

    def uniform(self, shape=()) -> np.ndarray | float:
        """Uniform draws in [0, 1) with 53-bit resolution."""
        n = int(np.prod(shape)) if shape else 1
        bits = self._next_block(n) >> np.uint64(11)
        vals = bits.astype(np.float64) * (2.0 ** -53)
        if not shape:
            return float(vals[0])
        return vals.reshape(shape)

    def normal(self, shape=()) -> np.ndarray | float:
        """Standard normal draws via the Box-Muller transform."""
        n = int(np.prod(shape)) if shape else 1
        pairs = (n + 1) // 2
        u = self._next_block(2 * pairs) >> np.uint64(11)
        u = u.astype(np.float64) * (2.0 ** -53)
        u1 = 1.0 - u[:pairs]  # in (0, 1], keeps log finite
        u2 = u[pairs:]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2.0 * math.pi * u2), r * np.sin(2.0 * math.pi * u2)])[:n]
        if not shape:
            return float(z[0])
        return z.reshape(shape)

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection-free modulo (n << 2^64)."""
        return self.next_uint64() % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

    def choice(self, weights: np.ndarray) -> int:
        """Index draw proportional to non-negative weights."""
        total = float(np.sum(weights))
        u = self.uniform() * total
        acc = 0.0
        for i, w in enumerate(weights):
            acc += float(w)
            if u < acc:
                return i
        return len(weights) - 1
