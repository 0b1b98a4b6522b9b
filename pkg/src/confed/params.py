"""Flat parameter vectors and their canonical byte form.

Every model in the network is a flat float64 vector, whatever its
architecture. Aggregation, divergence, and content hashing all operate on
this representation, so the byte layout is pinned here: a little-endian
64-bit element count followed by the elements as little-endian float64.
These bytes feed the SHA-256 content ids used throughout the model DAG,
which is why the encoding must never change.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

PARAM_DTYPE = np.dtype("<f8")
_COUNT_STRUCT = struct.Struct("<Q")


def validate_params(values: np.ndarray) -> np.ndarray:
    """Check that an array is a usable parameter vector and return it.

    A valid vector is one-dimensional, non-empty, float64, and contains
    no NaN or infinity.
    """
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise ValueError(f"parameter vector must be 1-D, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("parameter vector must be non-empty")
    if arr.dtype != np.float64:
        arr = arr.astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("parameter vector contains non-finite values")
    return arr


def params_to_bytes(values: np.ndarray) -> bytes:
    """Serialize a parameter vector to its canonical byte form."""
    arr = validate_params(values)
    return _COUNT_STRUCT.pack(arr.size) + arr.astype(PARAM_DTYPE).tobytes()


def params_from_bytes(data: bytes) -> np.ndarray:
    """Parse the canonical byte form back into a float64 vector."""
    if len(data) < _COUNT_STRUCT.size:
        raise ValueError("parameter bytes truncated: missing length prefix")
    (count,) = _COUNT_STRUCT.unpack_from(data)
    expected = _COUNT_STRUCT.size + count * 8
    if len(data) != expected:
        raise ValueError(
            f"parameter bytes length mismatch: prefix says {count} values "
            f"({expected} bytes), got {len(data)} bytes"
        )
    arr = np.frombuffer(data, dtype=PARAM_DTYPE, count=count, offset=_COUNT_STRUCT.size)
    return validate_params(arr.copy())


def params_to_hex(values: np.ndarray) -> str:
    return params_to_bytes(values).hex()


def params_from_hex(text: str) -> np.ndarray:
    return params_from_bytes(bytes.fromhex(text))


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def derive_seed(*parts) -> int:
    """Derive a 63-bit seed from a tuple of identifying values.

    Used to give every (learner, round, model) training call its own
    reproducible RNG stream that is independent of scheduling order.
    """
    h = hashlib.sha256()
    for part in parts:
        h.update(repr(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest()[:8], "little") >> 1
