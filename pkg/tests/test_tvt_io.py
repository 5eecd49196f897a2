import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avmae import tvt
from avmae.errors import FormatError


def test_header_layout():
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    blob = tvt.dump_bytes(arr)
    assert blob[:4] == b"TVT1"
    dtype_code, ndim = struct.unpack_from("<BB", blob, 4)
    assert dtype_code == 0 and ndim == 2
    assert struct.unpack_from("<2Q", blob, 6) == (2, 3)
    values = np.frombuffer(blob, dtype="<f4", offset=6 + 16)
    assert values.tolist() == arr.reshape(-1).tolist()


def test_f64_code():
    blob = tvt.dump_bytes(np.zeros(1, dtype=np.float64))
    assert blob[4] == 1


def test_roundtrip_exact_bits(tmp_path, rng):
    arr = rng.standard_normal((3, 4, 5)).astype(np.float32)
    path = tmp_path / "x.tvt"
    tvt.save(path, arr)
    back = tvt.load(path)
    assert back.dtype == np.float32
    assert np.array_equal(back.view(np.uint32), arr.view(np.uint32))


def test_bad_magic():
    with pytest.raises(FormatError, match="magic"):
        tvt.load_bytes(b"NOPE" + bytes(16))


def test_truncated_payload():
    blob = tvt.dump_bytes(np.zeros(4, dtype=np.float32))
    with pytest.raises(FormatError, match="bytes"):
        tvt.load_bytes(blob[:-2])


def test_integer_input_rejected():
    with pytest.raises(FormatError):
        tvt.dump_bytes(np.zeros(3, dtype=np.int32))


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.integers(1, 5), min_size=0, max_size=3),
    st.sampled_from([np.float32, np.float64]),
    st.integers(0, 2**31 - 1),
)
def test_roundtrip_property(shape, dtype, seed):
    arr = np.random.default_rng(seed).standard_normal(shape).astype(dtype)
    back = tvt.load_bytes(tvt.dump_bytes(arr))
    assert back.shape == tuple(shape)
    assert back.dtype == dtype
    assert np.array_equal(back, arr)
