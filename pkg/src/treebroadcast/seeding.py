"""Deterministic RNG derivation.

Every run takes a master seed; independent consumers get substreams derived
through SeedSequence spawn keys, so results depend only on (seed, stream ids)
and never on worker count or scheduling.
"""

from __future__ import annotations

import numpy as np

DEFAULT_SEED = 0xB10C


def derive_rng(seed: int, *stream: int) -> np.random.Generator:
    """Generator for the given substream of the master seed."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.PCG64(ss))
