"""
Seeded, platform-independent random streams.

Every stream is a numpy Philox generator (counter-based) keyed by a
SeedSequence built from the run seed and a spawn path, so the same
(seed, path) pair yields the same numbers on every machine.
"""

from typing import Tuple
import numpy as np
from pydantic import BaseModel, ConfigDict, Field

class SeededRng(BaseModel):
    model_config = ConfigDict(frozen=True)

    seed: int = Field(default=0, ge=0, lt=2**64)
    path: Tuple[int, ...] = ()

    def child(self, index: int) -> "SeededRng":
        """Independent sub-stream for the index-th consumer."""
        return SeededRng(seed=self.seed, path=self.path + (int(index),))

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        sequence = np.random.SeedSequence(self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(sequence))

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self.generator().uniform(low, high, size=shape)

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        return self.generator().normal(0.0, scale, size=shape)
