"""Seeded random streams.

All randomness flows through :func:`stream`, which derives an independent
PCG64 generator from a base seed plus a tuple of stream ids. Ids may be
integers or short strings; strings are mapped through CRC-32 so that the
mapping is stable across interpreter runs (``hash()`` is salted).
"""
from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("stream ids must be non-negative")
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def stream(seed: int, *ids) -> np.random.Generator:
    """Return the generator for stream ``ids`` under ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(p) for p in ids))
    return np.random.Generator(np.random.PCG64(ss))


def child_seed(seed: int, *ids) -> int:
    """A 63-bit integer seed derived from ``(seed, ids)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(p) for p in ids))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
