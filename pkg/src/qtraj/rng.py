"""Counter-based SplitMix64 uniforms.

Draw ``n`` of the stream for integer ``seed`` is::

    key   = mix64(seed mod 2**64)
    z     = key + (n + 1) * 0x9E3779B97F4A7C15      (mod 2**64)
    u     = (mix64(z) >> 11) * 2**-53               in [0, 1)

where ``mix64`` is the SplitMix64 finalizer (Steele, Lea & Flood 2014)::

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

Because a draw depends only on ``(seed, n)``, trajectories can be evolved in
any batch layout or order and still see identical random numbers.
"""
from __future__ import annotations

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def mix64(z: np.ndarray) -> np.ndarray:
    z = np.atleast_1d(np.asarray(z, dtype=np.uint64))
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def stream_keys(seeds) -> np.ndarray:
    raw = np.array([int(s) & _MASK for s in np.atleast_1d(seeds)], dtype=np.uint64)
    return mix64(raw)


def uniforms(keys: np.ndarray, counter: int) -> np.ndarray:
    """Draw number ``counter`` from each stream in ``keys``."""
    offset = np.array([((counter + 1) * GAMMA) & _MASK], dtype=np.uint64)
    z = mix64(keys + offset)
    return (z >> np.uint64(11)).astype(np.float64) * 2.0**-53


class CounterRNG:
    """Single stream with an explicit draw counter."""

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed)
        self.counter = int(counter)
        self._key = stream_keys([seed])

    def uniform(self) -> float:
        u = float(uniforms(self._key, self.counter)[0])
        self.counter += 1
        return u

    def __repr__(self) -> str:
        return f"CounterRNG(seed={self.seed}, counter={self.counter})"
