"""Seed derivation.

All randomness in the package flows from one 64-bit master seed. Submodules
get independent streams keyed by name, so adding a consumer never shifts the
draws of another.
"""

import hashlib

import numpy as np


def derive_seed(master_seed: int, *keys: "str | int") -> int:
    """Derive a 64-bit child seed from a master seed and a key path."""
    h = hashlib.sha256()
    h.update(str(int(master_seed)).encode())
    for k in keys:
        h.update(b"/")
        h.update(str(k).encode())
    return int.from_bytes(h.digest()[:8], "little")


def substream(master_seed: int, *keys: "str | int") -> np.random.Generator:
    """Independent generator for (master_seed, keys)."""
    return np.random.default_rng(derive_seed(master_seed, *keys))
