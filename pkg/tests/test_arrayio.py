import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from mrfpipe.arrayio import decode, digest, encode, load_array, save_array
from mrfpipe.errors import FormatError


@pytest.mark.parametrize("a", [
    np.arange(12.0).reshape(3, 4),
    (np.arange(6) + 1j * np.arange(6)[::-1]).reshape(2, 3),
    np.array([[True, False], [False, True]]),
    np.zeros((0, 5)),
    np.float64(3.5),
    np.array([np.nan, -0.0, np.inf]),
])
def test_round_trip(tmp_path, a):
    p = tmp_path / "a.mrfa"
    h = save_array(p, a)
    b = load_array(p)
    assert b.shape == np.shape(a)
    assert b.tobytes() == np.asarray(a).tobytes()
    assert h == digest(a)


def test_header_layout():
    buf = encode(np.ones((2, 3)))
    assert buf[:4] == b"MRFA"
    assert struct.unpack_from("<HBB", buf, 4) == (1, 1, 2)
    assert struct.unpack_from("<2Q", buf, 8) == (2, 3)
    assert len(buf) == 8 + 16 + 48


def test_bad_inputs():
    good = encode(np.ones(4))
    with pytest.raises(FormatError, match="magic"):
        decode(b"XXXX" + good[4:])
    with pytest.raises(FormatError, match="version"):
        decode(good[:4] + struct.pack("<H", 2) + good[6:])
    with pytest.raises(FormatError):
        decode(good[:-1])
    with pytest.raises(FormatError):
        decode(good[:5])
    with pytest.raises(FormatError):
        encode(np.array(["a"]))


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(dtype=st.sampled_from([np.float64, np.complex128, np.bool_]),
                  shape=hnp.array_shapes(min_dims=0, max_dims=4, max_side=5)))
def test_round_trip_property(a):
    b = decode(encode(a))
    assert b.dtype == a.dtype and b.shape == a.shape
    assert b.tobytes() == a.tobytes()
