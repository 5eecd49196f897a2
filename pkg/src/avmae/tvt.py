"""TVT on-disk tensor format.

Layout: magic `TVT1`, u8 dtype code (0 = f32, 1 = f64), u8 ndim, then
ndim little-endian u64 extents, then the raw row-major values, little-endian.
"""

from __future__ import annotations

import struct
from io import BytesIO

import numpy as np

from .errors import FormatError

MAGIC = b"TVT1"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def dump_bytes(array: np.ndarray) -> bytes:
    arr = np.asarray(array, order="C")  # ascontiguousarray would promote 0-d to 1-d
    if arr.dtype not in _CODES:
        raise FormatError(f"TVT stores f32/f64 only, got {arr.dtype}")
    buf = BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    buf.write(arr.astype(_DTYPES[_CODES[arr.dtype]], copy=False).tobytes())
    return buf.getvalue()


def load_bytes(blob: bytes) -> np.ndarray:
    if blob[:4] != MAGIC:
        raise FormatError("not a TVT blob (bad magic)")
    try:
        code, ndim = struct.unpack_from("<BB", blob, 4)
        shape = struct.unpack_from(f"<{ndim}Q", blob, 6)
    except struct.error as exc:
        raise FormatError("truncated TVT header") from exc
    if code not in _DTYPES:
        raise FormatError(f"unknown TVT dtype code {code}")
    dtype = _DTYPES[code]
    offset = 6 + 8 * ndim
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    expected = offset + count * dtype.itemsize
    if len(blob) != expected:
        raise FormatError(f"TVT payload is {len(blob)} bytes, expected {expected}")
    arr = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
    return arr.reshape(shape).astype(dtype.newbyteorder("="))


def save(path, array: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(dump_bytes(array))


def load(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return load_bytes(fh.read())
