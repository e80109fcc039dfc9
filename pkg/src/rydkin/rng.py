"""Reproducible random streams.

Every trajectory draws from its own PCG64 stream whose seed sequence is the
root seed plus a spawn key ``(*prefix, trajectory_index)``. Streams are thus
independent of the order and the thread on which trajectories execute.
"""
from __future__ import annotations

import numpy as np

MAX_SEED = 2**64 - 1


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return seed


def substream(seed: int, *key: int) -> np.random.Generator:
    """Generator for the stream identified by ``key`` under root ``seed``."""
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))
