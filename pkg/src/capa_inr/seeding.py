"""Deterministic seed splitting.

Every random quantity in a run derives from one root seed through
``subseed(root, tag, k)``, a 64-bit BLAKE2b hash of the triple.
"""
from __future__ import annotations

import hashlib

import numpy as np


def subseed(root: int, tag: str, k: int = 0) -> int:
    digest = hashlib.blake2b(f"{int(root)}|{tag}|{int(k)}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def rng_for(root: int, tag: str, k: int = 0) -> np.random.Generator:
    return np.random.default_rng(subseed(root, tag, k))
