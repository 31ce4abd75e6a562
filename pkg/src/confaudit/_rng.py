"""Seed derivation.

Every random draw in the package comes from a PCG64 generator seeded by a
``numpy.random.SeedSequence`` built from ``(seed, *stream)``.  Stream keys are
small non-negative integers naming the purpose of the draw (chunk index,
split index, tree index, ...), so results never depend on how work is
scheduled across threads.
"""

from __future__ import annotations

import numpy as np


def rng_for(seed: int, *stream: int) -> np.random.Generator:
    if seed < 0 or any(s < 0 for s in stream):
        raise ValueError("seeds and stream keys must be non-negative integers")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, stream)])))


def child_seed(seed: int, *stream: int) -> int:
    """A 63-bit integer seed derived from ``(seed, *stream)``."""
    ss = np.random.SeedSequence([int(seed), *map(int, stream)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
