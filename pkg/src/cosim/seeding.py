"""Deterministic per-stage seed derivation.

Every run draws all randomness from one base seed.  Stages (cluster splits,
per-model training, regressor repeats, ...) get child seeds derived by hashing
the stage label together with the base seed, so adding or reordering stages
never shifts the randomness of the others.
"""

import hashlib


def derive_seed(base_seed: int, label: str) -> int:
    """Return a stable 63-bit child seed for (base_seed, label)."""
    digest = hashlib.sha256(f"{base_seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFFFFFFFFFFFFFF
