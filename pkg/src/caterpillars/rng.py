"""Reproducible uniform streams, one per (master seed, replica index)."""

from __future__ import annotations

import math

import numpy as np

RNG_ALGORITHM = "Philox4x64"
_FIRST_BLOCK = 256
_MAX_BLOCK = 4096


class UniformStream:
    """Buffered uniforms on [0, 1) from a Philox counter-based generator.

    The stream for replica ``j`` of master seed ``s`` is keyed by
    ``SeedSequence(s, spawn_key=(j,))``, so replicas never overlap and the
    values do not depend on how many replicas run or in what order.
    """

    def __init__(self, seed: int, replica: int = 0):
        if seed < 0 or replica < 0:
            raise ValueError("seed and replica index must be non-negative")
        self.seed = int(seed)
        self.replica = int(replica)
        sequence = np.random.SeedSequence(self.seed, spawn_key=(self.replica,))
        self._gen = np.random.Generator(np.random.Philox(sequence))
        # Short runs are common, so the buffer starts small and doubles.
        # Chunking does not change the sequence of values.
        self._block = _FIRST_BLOCK
        self._buf = self._gen.random(self._block).tolist()
        self._pos = 0
        self.consumed = 0

    def uniform(self) -> float:
        if self._pos == self._block:
            self._block = min(2 * self._block, _MAX_BLOCK)
            self._buf = self._gen.random(self._block).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        self.consumed += 1
        return u

    def exponential(self, rate: float) -> float:
        """Exponential waiting time at ``rate``, from one uniform."""
        return -math.log1p(-self.uniform()) / rate
