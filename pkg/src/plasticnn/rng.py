"""Named random sub-streams derived from a single integer seed.

Every consumer (weight init, dropout masks, growth, data generation) draws
from its own stream, so adding a new consumer never shifts the numbers seen
by an existing one.
"""
import zlib

import numpy as np

INIT = "init"
DROPOUT = "dropout"
GROWTH = "growth"
DATA = "data"


def stream(seed, name, *extra):
    """Return a ``numpy.random.Generator`` for ``(seed, name, *extra)``.

    ``extra`` items must be non-negative integers (task index, arm index...).
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode("utf-8"))]
    key.extend(int(e) for e in extra)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))
