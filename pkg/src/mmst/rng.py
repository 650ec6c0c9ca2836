"""Splittable random streams.

Every source of randomness in the package draws from a counter-based
Philox generator keyed by ``(global seed, stream id)``.  Streams are
fully independent: data generation, parameter init, epoch shuffling and
latent sampling each own a stream kind, so adding draws to one never
perturbs another.
"""

from __future__ import annotations

import numpy as np

# Stream kinds.  The sub-index refines a kind (scene index, epoch
# number, example index, ...).
DATA = 1
INIT = 2
SHUFFLE = 3
LATENT = 4
EVAL = 5
SPLIT = 6


def stream(seed: int, kind: int, sub: int = 0) -> np.random.Generator:
    """Return the generator for stream ``(seed, kind, sub)``.

    Calling twice with the same key yields generators that produce
    identical draw sequences; the first ``n`` draws of a stream do not
    depend on how many draws are taken later (prefix property).
    """
    lane = (int(kind) & 0xFFFFFFFF) << 32 | (int(sub) & 0xFFFFFFFF)
    key = np.array([int(seed) & 0xFFFFFFFFFFFFFFFF, lane], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
