"""Orthonormal 2-D Haar transform over the last two axes.

Works for any image size: when a dimension is odd at some level, the
trailing sample is carried into the approximation band unchanged, which
keeps the transform orthonormal without padding.
"""
from __future__ import annotations

import numpy as np

_S = 1.0 / np.sqrt(2.0)


def _fwd_axis(x, axis):
    x = np.moveaxis(x, axis, -1)
    n = x.shape[-1]
    m = n // 2
    even, odd = x[..., 0:2 * m:2], x[..., 1:2 * m:2]
    a = (even + odd) * _S
    d = (even - odd) * _S
    if n % 2:
        a = np.concatenate([a, x[..., -1:]], axis=-1)
    return np.moveaxis(np.concatenate([a, d], axis=-1), -1, axis)


def _inv_axis(c, axis):
    c = np.moveaxis(c, axis, -1)
    n = c.shape[-1]
    m = n // 2
    na = n - m
    a, d = c[..., :na], c[..., na:]
    out = np.empty_like(c)
    out[..., 0:2 * m:2] = (a[..., :m] + d) * _S
    out[..., 1:2 * m:2] = (a[..., :m] - d) * _S
    if n % 2:
        out[..., -1] = a[..., -1]
    return np.moveaxis(out, -1, axis)


def _band_sizes(h, w, levels):
    sizes = [(h, w)]
    for _ in range(levels - 1):
        h, w = (h + 1) // 2, (w + 1) // 2
        sizes.append((h, w))
    return sizes


def haar2(x: np.ndarray, levels: int = 3) -> np.ndarray:
    c = np.array(x, copy=True)
    h, w = c.shape[-2:]
    for bh, bw in _band_sizes(h, w, levels):
        if bh < 2 and bw < 2:
            break
        block = c[..., :bh, :bw]
        if bh >= 2:
            block = _fwd_axis(block, -2)
        if bw >= 2:
            block = _fwd_axis(block, -1)
        c[..., :bh, :bw] = block
    return c


def ihaar2(c: np.ndarray, levels: int = 3) -> np.ndarray:
    x = np.array(c, copy=True)
    h, w = x.shape[-2:]
    for bh, bw in reversed(_band_sizes(h, w, levels)):
        if bh < 2 and bw < 2:
            continue
        block = x[..., :bh, :bw]
        if bw >= 2:
            block = _inv_axis(block, -1)
        if bh >= 2:
            block = _inv_axis(block, -2)
        x[..., :bh, :bw] = block
    return x
