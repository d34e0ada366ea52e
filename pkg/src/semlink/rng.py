"""Deterministic, splittable random number streams.

Every stochastic component of the simulator draws from an RngStream, a thin
wrapper over numpy's counter-based Philox generator keyed by
(seed, stream_id).  Identical keys give bit-identical sequences; distinct
stream_ids give statistically independent streams, so Monte Carlo trials can
fan out across workers and still assemble deterministic results.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def _mix64(a: int, b: int) -> int:
    """Mix two 64-bit ints into one (splitmix64 finalizer over a*phi + b)."""
    z = (a * 0x9E3779B97F4A7C15 + b) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


class RngStream:
    """One independent random stream addressed by (seed, stream_id).

    The counter tracks how many scalar draws were consumed; it is
    bookkeeping only (for logs), not part of the generator key.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        self.counter = 0
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, counter={self.counter})"

    def substream(self, *ids: int) -> "RngStream":
        """Derive an independent child stream from this stream's identity."""
        sid = self.stream_id
        for i in ids:
            sid = _mix64(sid, int(i) & _MASK64)
        return RngStream(self.seed, sid)

    # -- draws ------------------------------------------------------------

    def _count(self, shape) -> int:
        return int(np.prod(shape)) if shape else 1

    def normal(self, shape=(), mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        if std < 0:
            raise ValueError("std must be >= 0")
        self.counter += self._count(shape)
        return self._gen.normal(loc=mean, scale=std, size=shape)

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        self.counter += self._count(shape)
        return self._gen.uniform(low=low, high=high, size=shape)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Uniform integers in [low, high)."""
        self.counter += self._count(shape)
        return self._gen.integers(low, high, size=shape)

    def choice(self, n: int, size: int, replace: bool = False, p=None) -> np.ndarray:
        self.counter += size
        return self._gen.choice(n, size=size, replace=replace, p=p)

    def permutation(self, n: int) -> np.ndarray:
        self.counter += n
        return self._gen.permutation(n)

    def complex_normal(self, shape=(), mean: complex = 0.0, var: float = 1.0) -> np.ndarray:
        """i.i.d. circularly-symmetric complex Gaussian CN(mean, var)."""
        if var < 0:
            raise ValueError("var must be >= 0")
        s = np.sqrt(var / 2.0)
        re = self.normal(shape, std=1.0) * s + np.real(mean)
        im = self.normal(shape, std=1.0) * s + np.imag(mean)
        return re + 1j * im
