"""Seed derivation for independent, replayable random streams."""

from __future__ import annotations

import hashlib
import random


def derive_seed(seed: int, *labels: object) -> int:
    """Map a root seed plus labels to a 64-bit stream seed.

    Uses a cryptographic hash so streams are stable across Python versions
    and unaffected by hash randomization.
    """
    key = ":".join([str(int(seed))] + [str(x) for x in labels]).encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


def stream(seed: int, *labels: object) -> random.Random:
    return random.Random(derive_seed(seed, *labels))
