"""Deterministic random streams.

Every stream is a numpy Generator over the PCG64 bit generator, so a given
seed yields the identical draw sequence across runs and platforms (for a
fixed numpy version). State round-trips through a JSON-friendly dict for
checkpointing.
"""

from __future__ import annotations

import numpy as np


class SeededRng:
    """Seeded PCG64 stream with uniform / normal / bernoulli draws."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, shape=None, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def normal(self, shape=None, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        return self._gen.normal(mean, std, size=shape)

    def bernoulli(self, p: float, shape=None) -> np.ndarray:
        """0/1 float64 draws; p=0 gives all zeros, p=1 all ones."""
        draws = np.asarray(self._gen.uniform(0.0, 1.0, size=shape))
        return (draws < p).astype(np.float64)

    def integers(self, low: int, high: int, shape=None):
        """Integers in [low, high)."""
        return self._gen.integers(low, high, size=shape)

    def choice(self, n: int) -> int:
        return int(self._gen.integers(0, n))

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def get_state(self) -> dict:
        state = self._gen.bit_generator.state
        return {"seed": self.seed, "state": int(state["state"]["state"]),
                "inc": int(state["state"]["inc"]),
                "has_uint32": int(state["has_uint32"]),
                "uinteger": int(state["uinteger"])}

    def set_state(self, d: dict) -> None:
        self.seed = int(d["seed"])
        self._gen.bit_generator.state = {
            "bit_generator": "PCG64",
            "state": {"state": int(d["state"]), "inc": int(d["inc"])},
            "has_uint32": int(d["has_uint32"]),
            "uinteger": int(d["uinteger"]),
        }
