"""Hashing utilities for seed derivation, model identity and transcripts."""

import hashlib
from typing import Iterable

import numpy as np


def hash_content(content: str) -> str:
    """Generate a SHA-256 hex digest of text."""
    return hashlib.sha256(content.encode('utf-8')).hexdigest()


def derive_seed(master: int, label: str) -> int:
    """Derive an independent 64-bit seed from a master seed and a label."""
    digest = hashlib.sha256(f"{master}:{label}".encode('utf-8')).digest()
    return int.from_bytes(digest[:8], "little")


def hash_arrays(arrays: Iterable[np.ndarray]) -> str:
    """Digest a sequence of arrays by dtype, shape and little-endian bytes."""
    h = hashlib.sha256()
    for arr in arrays:
        arr = np.ascontiguousarray(arr)
        h.update(f"{arr.dtype.str}{arr.shape}".encode('utf-8'))
        h.update(arr.astype(arr.dtype.newbyteorder('<')).tobytes())
    return h.hexdigest()
