"""Seedable, forkable random streams.

Normal variates come from a Box-Muller transform over PCG64 doubles rather
than numpy's ziggurat so the exact draw sequence is defined here and does
not depend on numpy's sampler internals.
"""

from __future__ import annotations

import numpy as np


class RngStream:
    """Deterministic pseudo-random stream.

    ``fork(*key)`` derives an independent child stream from this stream's
    seed material and ``key`` alone, so children do not depend on how many
    values the parent has already produced.
    """

    def __init__(self, seed: int | np.random.SeedSequence = 0):
        if isinstance(seed, np.random.SeedSequence):
            self._seq = seed
        else:
            if int(seed) < 0:
                raise ValueError(f"seed must be nonnegative, got {seed}")
            self._seq = np.random.SeedSequence(int(seed))
        self._gen = np.random.Generator(np.random.PCG64(self._seq))

    @property
    def seed_sequence(self) -> np.random.SeedSequence:
        return self._seq

    def fork(self, *key: int) -> "RngStream":
        for k in key:
            if int(k) < 0:
                raise ValueError(f"fork keys must be nonnegative, got {k}")
        child = np.random.SeedSequence(
            entropy=self._seq.entropy,
            spawn_key=tuple(self._seq.spawn_key) + tuple(int(k) for k in key),
        )
        return RngStream(child)

    def random(self, size=None) -> np.ndarray | float:
        """Uniform doubles in [0, 1)."""
        return self._gen.random(size)

    def uniform(self, low, high, size=None):
        low = np.asarray(low, dtype=float)
        high = np.asarray(high, dtype=float)
        u = self._gen.random(size)
        out = low + (high - low) * u
        return float(out) if size is None and np.ndim(out) == 0 else out

    def normal(self, size=None):
        """Standard normal variates via Box-Muller; both outputs of each pair are used."""
        shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape, dtype=np.int64))
        n_pairs = (n + 1) // 2
        u1 = 1.0 - self._gen.random(n_pairs)  # (0, 1], keeps log finite
        u2 = self._gen.random(n_pairs)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.empty(2 * n_pairs)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        z = z[:n].reshape(shape)
        return float(z) if size is None else z

    def integers(self, low, high, size=None):
        """Integers uniform on the closed range [low, high]."""
        return self._gen.integers(low, high, size=size, endpoint=True)

    def bernoulli(self, p: float, size=None):
        return self._gen.random(size) < p

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
