"""Reader and writer for ``.mrt`` tensor files.

Layout, little-endian throughout::

    magic    8 bytes  b"MARCTNSR"
    version  u8       1
    dtype    u8       0 = float32, 1 = float64, 2 = complex64 (interleaved re, im)
    ndim     u8
    reserved u8       0
    dims     ndim x u32
    payload  row-major
"""

from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"MARCTNSR"
VERSION = 1

_DTYPES = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
    2: np.dtype("<c8"),
}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.complex64): 2}


class MrtError(ValueError):
    """Base class for malformed or unsupported tensor files."""


class BadMagicError(MrtError):
    pass


class UnsupportedVersionError(MrtError):
    pass


class UnsupportedDtypeError(MrtError):
    pass


class TruncatedPayloadError(MrtError):
    pass


class NonFiniteValueError(MrtError):
    pass


def encode(tensor: np.ndarray) -> bytes:
    arr = np.asarray(tensor)
    code = _CODES.get(arr.dtype)
    if code is None:
        raise UnsupportedDtypeError(f"cannot store dtype {arr.dtype}; use float32, float64 or complex64")
    if arr.ndim > 255:
        raise MrtError(f"too many dimensions: {arr.ndim}")
    if any(d < 1 or d >= 2**32 for d in arr.shape):
        raise MrtError(f"every dimension must be in [1, 2**32), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValueError("tensor contains NaN or Inf")
    header = MAGIC + struct.pack("<BBBB", VERSION, code, arr.ndim, 0)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
    return header + payload


def decode(buf: bytes) -> np.ndarray:
    if len(buf) < 12:
        raise TruncatedPayloadError(f"file too short for a header ({len(buf)} bytes)")
    if buf[:8] != MAGIC:
        raise BadMagicError(f"bad magic {buf[:8]!r}")
    version, code, ndim, _ = struct.unpack("<BBBB", buf[8:12])
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    if code not in _DTYPES:
        raise UnsupportedDtypeError(f"unsupported dtype code {code}")
    end = 12 + 4 * ndim
    if len(buf) < end:
        raise TruncatedPayloadError("header truncated inside dims")
    shape = struct.unpack(f"<{ndim}I", buf[12:end])
    if any(d == 0 for d in shape):
        raise MrtError(f"zero-length dimension in {shape}")
    dtype = _DTYPES[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    have = len(buf) - end
    if have < nbytes:
        raise TruncatedPayloadError(f"payload has {have} bytes, header declares {nbytes}")
    if have > nbytes:
        raise MrtError(f"{have - nbytes} trailing bytes after payload")
    arr = np.frombuffer(buf, dtype=dtype, offset=end).reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValueError("payload contains NaN or Inf")
    return arr.astype(dtype.newbyteorder("="), copy=True)


def write_mrt(path: str | os.PathLike, tensor: np.ndarray) -> None:
    data = encode(tensor)
    with open(path, "wb") as fh:
        fh.write(data)


def read_mrt(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode(fh.read())
