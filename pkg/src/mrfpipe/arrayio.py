"""Binary array container (``.mrfa``).

Layout, all little-endian::

    magic    4 bytes  b"MRFA"
    version  u16
    dtype    u8       1 = float64, 2 = complex128, 3 = bool (one byte each)
    ndim     u8
    dims     ndim x u64
    payload  row-major element data
"""
from __future__ import annotations

import hashlib
import os
import struct
import tempfile

import numpy as np

from .errors import FormatError

MAGIC = b"MRFA"
VERSION = 1
_CODES = {1: np.dtype("<f8"), 2: np.dtype("<c16"), 3: np.dtype("|b1")}


def _code_for(a: np.ndarray) -> int:
    if a.dtype == np.bool_:
        return 3
    if np.iscomplexobj(a):
        return 2
    if np.issubdtype(a.dtype, np.number):
        return 1
    raise FormatError(f"unsupported dtype {a.dtype}")


def encode(array) -> bytes:
    a = np.asarray(array)
    code = _code_for(a)
    if a.ndim > 255:
        raise FormatError("too many dimensions")
    payload = np.ascontiguousarray(a, dtype=_CODES[code]).tobytes()
    header = MAGIC + struct.pack("<HBB", VERSION, code, a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
    return header + payload


def decode(buf: bytes) -> np.ndarray:
    if len(buf) < 8:
        raise FormatError("truncated header")
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    version, code, ndim = struct.unpack_from("<HBB", buf, 4)
    if version != VERSION:
        raise FormatError(f"format version {version} not supported (this reader handles version {VERSION})")
    if code not in _CODES:
        raise FormatError(f"unknown element-type code {code}")
    off = 8 + 8 * ndim
    if len(buf) < off:
        raise FormatError("truncated dimension list")
    dims = struct.unpack_from(f"<{ndim}Q", buf, 8)
    dtype = _CODES[code]
    expected = int(np.prod(dims, dtype=np.uint64)) * dtype.itemsize
    if len(buf) - off != expected:
        raise FormatError(f"payload has {len(buf) - off} bytes, expected {expected}")
    out = np.frombuffer(buf, dtype=dtype, offset=off).reshape(dims)
    if code == 1:
        out = out.astype(np.float64)
    elif code == 2:
        out = out.astype(np.complex128)
    else:
        out = out.astype(bool)
    return out


def save_array(path, array) -> str:
    """Write atomically; returns the sha256 hex digest of the file bytes."""
    data = encode(array)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return hashlib.sha256(data).hexdigest()


def load_array(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode(fh.read())


def digest(array) -> str:
    return hashlib.sha256(encode(array)).hexdigest()
