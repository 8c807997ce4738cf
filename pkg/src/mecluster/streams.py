"""Deterministic random sub-streams keyed by integer tuples.

Every random draw in the package comes from
``substream(seed, *key)``, so results depend on the key, never on the
order in which replicates or datasets are executed.
"""

from __future__ import annotations

import zlib

import numpy as np

STAGE = {
    "naive": 0,
    "rc": 1,
    "simex": 2,
    "mi": 3,
    "mi_null": 4,
    "gs7": 5,
    "gs28": 6,
    "generate": 7,
    "reference": 8,
}
CLUSTER = 100
REDRAW = 200


def _entropy(seed):
    if isinstance(seed, np.random.SeedSequence):
        return seed.entropy, tuple(seed.spawn_key)
    if isinstance(seed, (tuple, list)):
        return [int(s) for s in seed], ()
    return int(0 if seed is None else seed), ()


def substream(seed, *key):
    """Generator for the stream identified by ``(seed, key)``."""
    entropy, base = _entropy(seed)
    ss = np.random.SeedSequence(entropy=entropy, spawn_key=base + tuple(int(k) for k in key))
    return np.random.default_rng(ss)


def child_seed(seed, *key):
    """A SeedSequence usable as the ``seed`` argument of another call."""
    entropy, base = _entropy(seed)
    return np.random.SeedSequence(entropy=entropy, spawn_key=base + tuple(int(k) for k in key))


def stable_id(text):
    """Stable 32-bit integer for a string label (scenario ids)."""
    return zlib.crc32(str(text).encode("utf-8"))
