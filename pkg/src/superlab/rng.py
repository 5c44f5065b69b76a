"""Counter-based random streams.

Every stream is a Philox generator keyed by ``(seed, purpose, index...)``
through ``SeedSequence``, so a draw depends only on where it sits in the
experiment and never on thread scheduling.
"""
from __future__ import annotations

import enum

import numpy as np

BLOCK_SIZE = 4096


class Purpose(enum.IntEnum):
    SIMULATE = 0
    RESTART = 1
    SPINE_PATH = 2
    SPINE_IMMIGRATION = 3
    SPINE_DESCENDANTS = 4
    RESAMPLE = 5


def stream(seed: int, purpose: Purpose, *index: int) -> np.random.Generator:
    if seed < 0 or seed >= 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    key = [int(seed), int(purpose), *(int(i) for i in index)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def blocks(n_paths: int, block_size: int = BLOCK_SIZE) -> list[tuple[int, int, int]]:
    """``(block_index, start, stop)`` covering ``range(n_paths)``."""
    return [(b, s, min(s + block_size, n_paths))
            for b, s in enumerate(range(0, n_paths, block_size))]
