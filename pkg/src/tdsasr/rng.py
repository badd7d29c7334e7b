"""Deterministic random number generation.

All stochastic behaviour in the package (init, dropout, target sampling,
synthetic data) flows through an Rng so that a single 64-bit seed fully
determines every run. PCG64 streams are stable across platforms and numpy
releases for a fixed bit-generator version.
"""

from __future__ import annotations

import numpy as np


class Rng:
    """Seeded random stream with deterministic sub-stream derivation."""

    def __init__(self, seed: int, _ss: np.random.SeedSequence | None = None):
        self.seed = int(seed)
        ss = _ss if _ss is not None else np.random.SeedSequence(self.seed)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def derive(self, index: int) -> "Rng":
        """Independent stream keyed by (seed, index); same (seed, index)
        always yields the same stream."""
        ss = np.random.SeedSequence(self.seed, spawn_key=(int(index),))
        return Rng(self.seed, _ss=ss)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size=size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None) -> np.ndarray:
        return self._gen.normal(loc, scale, size=size)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        """Draw from [low, high) like range()."""
        return self._gen.integers(low, high, size=size)

    def shuffle(self, seq: list) -> None:
        self._gen.shuffle(seq)

    def get_state(self) -> dict:
        return self._gen.bit_generator.state

    def set_state(self, state: dict) -> None:
        self._gen.bit_generator.state = state
