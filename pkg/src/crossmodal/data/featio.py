"""Binary container for timestamped feature rows.

Layout (little endian):
    magic   4 bytes  b"MMTF"
    version u32      currently 1
    dim     u32      row width
    count   u32      number of records
    dtype   u8       1 = float32, 2 = float64
    records count * (timestamp + dim values), in the file dtype

Expert feature files on disk always use dtype 1. Representation stores
reuse the same framing with dtype 2 so that scores computed offline match
the online path beyond float32 resolution.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FeatureFormatError

MAGIC = b"MMTF"
VERSION = 1
DTYPE_F32 = 1
DTYPE_F64 = 2

_HEADER = struct.Struct("<4sIIIB")
_NP_DTYPES = {DTYPE_F32: np.dtype("<f4"), DTYPE_F64: np.dtype("<f8")}


def write_records(path: str | Path, timestamps: np.ndarray, rows: np.ndarray,
                  dtype_code: int = DTYPE_F32) -> None:
    """Write K timestamped rows. rows has shape [K, dim]; K may be zero."""
    if dtype_code not in _NP_DTYPES:
        raise FeatureFormatError(f"unknown dtype code {dtype_code}")
    timestamps = np.asarray(timestamps, dtype=np.float64)
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise FeatureFormatError("rows must be a [count, dim] array")
    if timestamps.shape != (rows.shape[0],):
        raise FeatureFormatError("timestamp count must match row count")
    if timestamps.size and np.any(np.diff(timestamps) < 0):
        raise FeatureFormatError("timestamps must be nondecreasing")
    if not (np.all(np.isfinite(timestamps)) and np.all(np.isfinite(rows))):
        raise FeatureFormatError("non-finite values in feature records")

    np_dtype = _NP_DTYPES[dtype_code]
    count, dim = rows.shape
    payload = np.empty((count, dim + 1), dtype=np_dtype)
    payload[:, 0] = timestamps
    payload[:, 1:] = rows
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, dim, count, dtype_code))
        fh.write(payload.tobytes())


def read_records(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read a container; returns (timestamps [K], rows [K, dim]) as float64."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise FeatureFormatError(f"cannot read feature file {path}: {exc}") from exc
    if len(blob) < _HEADER.size:
        raise FeatureFormatError(f"{path}: truncated header")
    magic, version, dim, count, dtype_code = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FeatureFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FeatureFormatError(f"{path}: unsupported version {version}")
    if dtype_code not in _NP_DTYPES:
        raise FeatureFormatError(f"{path}: unknown dtype code {dtype_code}")
    np_dtype = _NP_DTYPES[dtype_code]
    expected = _HEADER.size + count * (dim + 1) * np_dtype.itemsize
    if len(blob) != expected:
        raise FeatureFormatError(
            f"{path}: payload size {len(blob) - _HEADER.size} does not match "
            f"count={count} dim={dim}"
        )
    flat = np.frombuffer(blob, dtype=np_dtype, offset=_HEADER.size)
    payload = flat.reshape(count, dim + 1).astype(np.float64)
    timestamps = payload[:, 0].copy()
    rows = payload[:, 1:].copy()
    if timestamps.size and np.any(np.diff(timestamps) < 0):
        raise FeatureFormatError(f"{path}: timestamps must be nondecreasing")
    if not (np.all(np.isfinite(timestamps)) and np.all(np.isfinite(rows))):
        raise FeatureFormatError(f"{path}: non-finite values")
    return timestamps, rows


def write_expert_features(path: str | Path, timestamps: np.ndarray,
                          features: np.ndarray) -> None:
    """Expert features are stored as float32 on disk."""
    write_records(path, timestamps, features, dtype_code=DTYPE_F32)


def read_expert_features(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    return read_records(path)
