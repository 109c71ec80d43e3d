"""Deterministic seed derivation.

Seeds are pure functions of their inputs so that serial and parallel
schedules draw identical random streams.
"""

from __future__ import annotations

import numpy as np

# Stream tags keep independent uses of one experiment seed apart.
STREAM_PARTITION = 1
STREAM_SPLIT = 2
STREAM_TRAIN = 3
STREAM_INIT = 4
STREAM_FINETUNE = 5
STREAM_SAMPLING = 6
STREAM_SYNTHETIC = 7


def derive_seed(*parts: int) -> int:
    """Combine non-negative integers into a 32-bit seed."""
    entropy = [int(p) for p in parts]
    if any(p < 0 for p in entropy):
        raise ValueError("Seed components must be non-negative")
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def make_rng(*parts: int) -> np.random.Generator:
    """Return a ``numpy`` generator seeded from ``derive_seed(*parts)``."""
    return np.random.default_rng(derive_seed(*parts))
