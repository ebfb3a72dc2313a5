"""Counter-based random streams.

Every consumer derives its own Philox generator from (seed, namespace,
indices...), so draws are independent of call order and safe to
parallelize. Stream keys are documented in the README.
"""
from __future__ import annotations

import numpy as np

CLASS_PROTO = 0
VIDEO = 1
MODEL_INIT = 2
TRAIN_EPISODE = 3
EVAL_EPISODE = 4
GRADCHECK = 5


def stream(seed: int, *key: int) -> np.random.Generator:
    """Philox generator keyed by (seed, *key) via SeedSequence."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, *key))))


def name_key(name: str) -> tuple:
    """Stable integer key for a string (for per-parameter streams)."""
    return tuple(name.encode("utf-8"))
