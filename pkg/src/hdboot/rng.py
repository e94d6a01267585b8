"""Seeded random streams.

All randomness goes through counter-based Philox generators whose key is
derived from ``SeedSequence(seed, spawn_key=key)``.  A stream is fully
identified by the integer seed and a tuple of small integers (purpose tag,
replicate index, ...), so results never depend on call order or on how work
is split across threads.
"""

import numpy as np

# purpose tags, first element of every spawn key
CV = 1
BOOTSTRAP = 2
DESIGN = 3
SIGNAL = 4
REPLICATION = 5


def stream(seed, *key):
    """Return the generator for stream ``key`` under ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed, *key):
    """Derive a fresh 63-bit integer seed for a sub-computation."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
