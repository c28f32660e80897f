"""Deterministic random-stream splitting.

Every random quantity in the package is drawn from a PCG64 generator seeded
with ``SeedSequence((seed, stream, *key))`` so that sub-experiments sharing a
seed stay independently reproducible.  Stream ids are fixed constants: adding
a new stream must never renumber an existing one, or old seeds stop
reproducing old data.
"""
from __future__ import annotations

import numpy as np

# Stream ids (append-only).
TOPOLOGY = 1
FLOWS = 2
RATES = 3
SIM_ARRIVAL = 4
SIM_RATE = 5
SIM_CONTENTION = 6

_MASK64 = (1 << 64) - 1


def stream(seed: int, stream_id: int, *key: int) -> np.random.Generator:
    """Return the generator for ``stream_id`` (plus optional sub-key) under ``seed``."""
    entropy = tuple(int(k) & _MASK64 for k in (seed, stream_id, *key))
    return np.random.default_rng(np.random.SeedSequence(entropy))
