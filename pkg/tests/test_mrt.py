import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from marc.mrt import (
    BadMagicError,
    MrtError,
    NonFiniteValueError,
    TruncatedPayloadError,
    UnsupportedDtypeError,
    UnsupportedVersionError,
    decode,
    encode,
    read_mrt,
    write_mrt,
)


@pytest.mark.parametrize("dtype", [np.float32, np.float64, np.complex64])
@pytest.mark.parametrize("shape", [(1,), (3, 1, 2), (1, 1, 1, 1), (7, 4, 5)])
def test_roundtrip(tmp_path, dtype, shape):
    rng = np.random.default_rng(0)
    x = rng.normal(size=shape).astype(dtype)
    if np.iscomplexobj(x):
        x = x + 1j * rng.normal(size=shape).astype(np.float32)
    write_mrt(tmp_path / "t.mrt", x)
    y = read_mrt(tmp_path / "t.mrt")
    assert y.dtype == x.dtype and y.shape == x.shape
    assert y.tobytes() == x.tobytes()


def test_header_layout():
    buf = encode(np.arange(6, dtype=np.float32).reshape(2, 3))
    assert buf[:8] == b"MARCTNSR"
    assert buf[8:12] == bytes([1, 0, 2, 0])  # version, dtype, ndim, reserved
    assert struct.unpack("<2I", buf[12:20]) == (2, 3)
    assert len(buf) == 20 + 6 * 4


def test_bad_magic():
    buf = bytearray(encode(np.zeros(3, np.float32)))
    buf[:8] = b"XXXXXXXX"
    with pytest.raises(BadMagicError):
        decode(bytes(buf))


def test_truncated_payload():
    buf = encode(np.zeros(10, np.float32))
    with pytest.raises(TruncatedPayloadError):
        decode(buf[:-4])


def test_trailing_bytes_rejected():
    with pytest.raises(MrtError):
        decode(encode(np.zeros(2, np.float32)) + b"\0")


def test_version_and_dtype_codes():
    buf = bytearray(encode(np.zeros(2, np.float32)))
    bad = bytearray(buf)
    bad[8] = 2
    with pytest.raises(UnsupportedVersionError):
        decode(bytes(bad))
    bad = bytearray(buf)
    bad[9] = 9
    with pytest.raises(UnsupportedDtypeError):
        decode(bytes(bad))
    with pytest.raises(UnsupportedDtypeError):
        encode(np.zeros(2, np.int32))


@pytest.mark.parametrize("value", [np.nan, np.inf, -np.inf])
def test_non_finite_rejected(value):
    x = np.zeros(4, np.float32)
    x[2] = value
    with pytest.raises(NonFiniteValueError):
        encode(x)


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        read_mrt("/nonexistent/x.mrt")


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=4), st.integers(0, 2**32 - 1))
def test_roundtrip_property(shape, seed):
    x = np.random.default_rng(seed).normal(size=shape)
    assert decode(encode(x)).tobytes() == x.tobytes()
