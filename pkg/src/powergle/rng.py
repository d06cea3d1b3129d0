"""Deterministic counter-based random streams.

Every draw is addressed by ``(master seed, purpose, trajectory, mode, block)``:
the seed and purpose form the Philox key and the remaining indices fill the
upper words of the 256-bit counter. Streams are therefore independent of the
order in which they are requested, which makes ensemble results independent
of chunking and thread count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BLOCK = 1024  # steps per noise block

INCREMENTS = 0
INITIAL = 1
AUXILIARY = 2

_MASK = (1 << 64) - 1


def _generator(seed: int, purpose: int, traj: int, mode: int, block: int) -> np.random.Generator:
    key = np.array([seed & _MASK, purpose], dtype=np.uint64)
    counter = np.array([0, block, mode, traj], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


@dataclass(frozen=True)
class RngStream:
    """Substream for one (trajectory, mode) pair under a master seed."""

    master_seed: int
    trajectory: int
    mode: int
    purpose: int = INCREMENTS

    def generator(self, block: int = 0) -> np.random.Generator:
        return _generator(self.master_seed, self.purpose, self.trajectory, self.mode, block)

    def block_normals(self, block: int) -> np.ndarray:
        """``(BLOCK, 2)`` standard normals: increment and auxiliary draw per step."""
        return self.generator(block).standard_normal((BLOCK, 2))


def noise_normals(seed: int, trajectories, n_modes: int, start: int, stop: int) -> np.ndarray:
    """Standard normals for steps ``[start, stop)``, shape ``(steps, n_traj, n_modes+1, 2)``."""
    trajectories = list(trajectories)
    out = np.empty((stop - start, len(trajectories), n_modes + 1, 2))
    first, last = start // BLOCK, (stop - 1) // BLOCK
    for b in range(first, last + 1):
        lo, hi = max(start, b * BLOCK), min(stop, (b + 1) * BLOCK)
        for i, t in enumerate(trajectories):
            for k in range(n_modes + 1):
                z = RngStream(seed, t, k).block_normals(b)
                out[lo - start:hi - start, i, k] = z[lo - b * BLOCK:hi - b * BLOCK]
    return out


def initial_normals(seed: int, trajectories, count: int) -> np.ndarray:
    """``count`` standard normals per trajectory for initial conditions, shape (n_traj, count)."""
    return np.stack([RngStream(seed, t, 0, INITIAL).generator().standard_normal(count)
                     for t in trajectories]) if len(trajectories) else np.empty((0, count))


def auxiliary_generator(seed: int, tag: int) -> np.random.Generator:
    """Stand-alone generator for Monte Carlo checks not tied to a trajectory grid."""
    return _generator(seed, AUXILIARY, 0, tag, 0)
