"""Deterministic random substreams.

Every stage of the pipeline draws from a generator derived from one root
seed plus a tuple of names (e.g. ``("train", "mfcc_b", "fight", 3)``).
Two runs with the same root seed therefore reproduce each other exactly,
and stages may run in any order or in parallel without sharing state.
"""

import hashlib

import numpy as np


def child_seed(root: int, *names) -> int:
    """Map (root, names...) to a stable 64-bit seed.

    Uses blake2b so the mapping is identical across platforms and Python
    versions (unlike hash()).
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(root)).encode())
    for name in names:
        h.update(b"\x00")
        h.update(str(name).encode())
    return int.from_bytes(h.digest(), "big")


def generator(root: int, *names) -> np.random.Generator:
    """A numpy Generator seeded from the named substream."""
    return np.random.default_rng(child_seed(root, *names))
