"""Counter-based random number streams for reproducible parallel simulation.

Each stream is keyed by (seed, purpose) and indexed by a step counter, built
on the Philox counter-based generator.  A whole block of variates for one
step is produced by a single call, so the value attached to a given
(seed, step, particle, axis) coordinate never depends on evaluation order or
thread schedule.  Streams are stateless: redrawing the same step yields the
same block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Purpose tags keep the initial-condition draws and the per-step Brownian
# increments in disjoint Philox keyspaces.
_PURPOSE_INIT = 0
_PURPOSE_STEP = 1


@dataclass(frozen=True)
class RngStream:
    """Deterministic stream of Gaussian/uniform blocks indexed by step."""

    seed: int

    def _generator(self, purpose: int, step: int) -> np.random.Generator:
        key = np.array([np.uint64(self.seed & 0xFFFFFFFFFFFFFFFF),
                        np.uint64(purpose)], dtype=np.uint64)
        counter = np.array([0, 0, 0, np.uint64(step)], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(counter=counter, key=key))

    def normals(self, step: int, shape) -> np.ndarray:
        """Standard normal block for one time step.

        For particle systems use shape (n, 2); entry [i, a] is the increment
        for particle i, axis a.
        """
        if step < 0:
            raise ValueError("step must be >= 0")
        return self._generator(_PURPOSE_STEP, step).standard_normal(shape)

    def init_generator(self) -> np.random.Generator:
        """Generator reserved for sampling initial conditions."""
        return self._generator(_PURPOSE_INIT, 0)

    def substream(self, offset: int) -> "RngStream":
        """Disjoint stream for replica `offset` (seed shifted by offset)."""
        return RngStream(seed=(self.seed + offset) & 0xFFFFFFFFFFFFFFFF)
