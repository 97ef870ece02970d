"""Hierarchical seed derivation.

Every random stream in the package is obtained from a single integer seed plus
a path of component names and integer indices, e.g.
``derive_rng(seed, "train", "dirichlet", epoch, example_index)``.  String path
elements are hashed with CRC32, so the stream for a given path never depends on
how many other streams were created before it or on how work is split across
workers.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if isinstance(part, (bool, np.bool_)):
        return int(part)
    if isinstance(part, (int, np.integer)):
        value = int(part)
        if value < 0:
            raise ValueError(f"negative seed path element: {value}")
        return value
    raise TypeError(f"unsupported seed path element: {part!r}")


def derive_seed_sequence(seed: int, *path) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=_key(seed), spawn_key=tuple(_key(p) for p in path))


def derive_rng(seed: int, *path) -> np.random.Generator:
    """Return an independent PCG64 generator for ``(seed, *path)``."""
    return np.random.Generator(np.random.PCG64(derive_seed_sequence(seed, *path)))
