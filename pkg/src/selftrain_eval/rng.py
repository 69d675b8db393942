"""Seeded random streams.

Every random draw in the package comes from a PCG64 generator whose 64-bit
seed is the BLAKE2b digest of ``(seed, *tags)``. Streams for different
purposes (weight init, shuffling, pseudo-label ties, ...) are therefore
independent of each other and of the order in which they are requested.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, *tags: object) -> int:
    """Hash ``seed`` and ``tags`` into a 64-bit integer."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed)).encode())
    for tag in tags:
        h.update(b"\x1f")
        h.update(str(tag).encode())
    return int.from_bytes(h.digest(), "little")


def stream(seed: int, *tags: object) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(seed, *tags)))
