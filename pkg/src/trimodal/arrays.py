"""Flat binary array format used by dataset files and checkpoint blocks.

Layout: a 16-byte little-endian header followed by the raw array payload
in C order. Header fields: 4-byte magic ``TMA1``, dtype code (u16), rank
(u16), and four u16 dims (unused trailing dims are zero). Dims are capped
at 65535, which is ample at desk scale.
"""

from __future__ import annotations

import hashlib
import os
import struct

import numpy as np

from .errors import ConfigurationError, ShapeError

MAGIC = b"TMA1"
_HEADER = struct.Struct("<4sHH4H")
HEADER_BYTES = _HEADER.size  # 16

_DTYPE_CODES = {
    np.dtype("<f4"): 1,
    np.dtype("<f8"): 2,
    np.dtype("<i4"): 3,
    np.dtype("<i8"): 4,
    np.dtype("|u1"): 5,
}
_CODE_DTYPES = {code: dt for dt, code in _DTYPE_CODES.items()}

MAX_RANK = 4
MAX_DIM = 0xFFFF


def array_to_bytes(arr: np.ndarray) -> bytes:
    """Serialize one array to header + little-endian payload."""
    arr = np.ascontiguousarray(arr)
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
    arr = arr.astype(dt, copy=False)
    if arr.dtype not in _DTYPE_CODES:
        raise ConfigurationError(f"unsupported dtype for array file: {arr.dtype}")
    if arr.ndim > MAX_RANK:
        raise ShapeError(f"rank {arr.ndim} exceeds the format maximum of {MAX_RANK}")
    for d in arr.shape:
        if d > MAX_DIM:
            raise ShapeError(f"dimension {d} exceeds the format maximum of {MAX_DIM}")
    dims = list(arr.shape) + [0] * (MAX_RANK - arr.ndim)
    header = _HEADER.pack(MAGIC, _DTYPE_CODES[arr.dtype], arr.ndim, *dims)
    return header + arr.tobytes(order="C")


def array_from_bytes(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Read one array starting at ``offset``; returns (array, bytes consumed)."""
    magic, code, rank, *dims = _HEADER.unpack_from(buf, offset)
    if magic != MAGIC:
        raise ConfigurationError(f"bad array magic {magic!r}")
    if code not in _CODE_DTYPES:
        raise ConfigurationError(f"unknown dtype code {code}")
    if rank > MAX_RANK:
        raise ShapeError(f"rank {rank} exceeds the format maximum of {MAX_RANK}")
    shape = tuple(dims[:rank])
    dtype = _CODE_DTYPES[code]
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    start = offset + HEADER_BYTES
    end = start + count * dtype.itemsize
    if end > len(buf):
        raise ShapeError("array payload truncated")
    arr = np.frombuffer(buf[start:end], dtype=dtype).reshape(shape).copy()
    return arr, end - offset


def write_array(path: str | os.PathLike, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(array_to_bytes(arr))


def read_array(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    arr, consumed = array_from_bytes(buf)
    if consumed != len(buf):
        raise ShapeError(f"trailing bytes in array file {path}")
    return arr


def record_bytes(shape_per_sample: tuple[int, ...], dtype: np.dtype) -> int:
    """Payload bytes occupied by one sample in a stacked array file."""
    return int(np.prod(shape_per_sample, dtype=np.int64)) * np.dtype(dtype).itemsize


def sample_offset(index: int, shape_per_sample: tuple[int, ...], dtype: np.dtype) -> int:
    """Byte offset of sample ``index`` inside a stacked array file."""
    return HEADER_BYTES + index * record_bytes(shape_per_sample, dtype)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
