"""On-disk vector store.

Contiguous little-endian float32 rows behind a 16-byte header:
magic "EVPX", dim as uint32, row count as uint64.
"""
from __future__ import annotations

import struct

import numpy as np

from .errors import SchemaViolation

MAGIC = b"EVPX"
_HEADER = struct.Struct("<4sIQ")   # magic, dim, count


def write_vectors(vectors: np.ndarray) -> bytes:
    if vectors.ndim != 2:
        raise ValueError("expected a 2-d array of row vectors")
    count, dim = vectors.shape
    body = np.ascontiguousarray(vectors, dtype="<f4").tobytes()
    return _HEADER.pack(MAGIC, dim, count) + body


def read_vectors(data: bytes) -> np.ndarray:
    if len(data) < _HEADER.size:
        raise SchemaViolation("vector store shorter than its header")
    magic, dim, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise SchemaViolation(f"bad vector store magic {magic!r}")
    expected = _HEADER.size + 4 * dim * count
    if len(data) != expected:
        raise SchemaViolation(
            f"vector store size {len(data)} != expected {expected}")
    flat = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    return flat.reshape(count, dim).astype(np.float64)
