"""Wavelet + total-variation regularized reconstruction of undersampled frames.

Each frame solves

    min_x ||M F x - y||^2 + lam_w ||W x||_1 + lam_tv TV_eps(x)

with F the centered unitary DFT, W an orthonormal Haar transform and
TV_eps(x) = sum sqrt(|Dx x|^2 + |Dy x|^2 + eps^2) (forward differences,
zero at the last row/column). The smooth part (data fit + TV) is handled
by gradient steps, the wavelet term by its exact proximal map.

Complex gradients follow the convention g = df/dRe(x) + i df/dIm(x), so a
directional derivative along e is Re(sum(conj(g) * e)).

Frames are solved in one batch, but every frame keeps its own step size,
momentum, acceptance decisions and stopping flag, so the result for a
frame does not depend on which other frames share the batch.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from .errors import NumericalFailureError
from .wavelet import haar2, ihaar2

log = logging.getLogger(__name__)

AXES = (-2, -1)


def fft2c(x):
    return sfft.fftshift(sfft.fft2(sfft.ifftshift(x, axes=AXES), norm="ortho"), axes=AXES)


def ifft2c(k):
    return sfft.fftshift(sfft.ifft2(sfft.ifftshift(k, axes=AXES), norm="ortho"), axes=AXES)


@dataclass
class ReconProblem:
    kspace_frame: np.ndarray
    mask: np.ndarray
    lambda_wavelet: float = 1e-3
    lambda_tv: float = 5e-4
    max_iters: int = 200
    tolerance: float = 1e-6
    eps: float = 1e-8
    levels: int = 3

    def __post_init__(self):
        if self.kspace_frame.shape[-2:] != self.mask.shape[-2:]:
            raise ValueError("k-space and mask dimensions disagree")
        if self.lambda_wavelet < 0 or self.lambda_tv < 0:
            raise ValueError("regularization weights must be nonnegative")


def soft_threshold(v, t: float):
    """Complex soft threshold: shrink |v| by t, keep the phase."""
    v = np.asarray(v)
    mag = np.abs(v)
    scale = np.maximum(mag - t, 0.0) / np.where(mag > 0, mag, 1.0)
    out = v * scale
    return out if out.ndim else out[()]


def _grad(x):
    dx = np.zeros_like(x)
    dy = np.zeros_like(x)
    dx[..., :, :-1] = x[..., :, 1:] - x[..., :, :-1]
    dy[..., :-1, :] = x[..., 1:, :] - x[..., :-1, :]
    return dx, dy


def _grad_adjoint(px, py):
    out = np.zeros_like(px)
    out[..., :, 1:] += px[..., :, :-1]
    out[..., :, :-1] -= px[..., :, :-1]
    out[..., 1:, :] += py[..., :-1, :]
    out[..., :-1, :] -= py[..., :-1, :]
    return out


def tv_value(x, eps):
    dx, dy = _grad(x)
    return np.sqrt(np.abs(dx) ** 2 + np.abs(dy) ** 2 + eps ** 2).sum(axis=AXES)


class _Terms:
    """Objective pieces for a batch of frames (leading axis)."""

    def __init__(self, y, mask, lam_w, lam_tv, eps, levels):
        self.y, self.mask = y, mask
        self.lam_w, self.lam_tv, self.eps, self.levels = lam_w, lam_tv, eps, levels

    def sub(self, idx):
        return _Terms(self.y[idx], self.mask[idx], self.lam_w, self.lam_tv, self.eps, self.levels)

    def smooth(self, x):
        r = np.where(self.mask, fft2c(x), 0) - self.y
        val = (np.abs(r) ** 2).sum(axis=AXES)
        if self.lam_tv:
            val = val + self.lam_tv * tv_value(x, self.eps)
        return val

    def smooth_grad(self, x):
        r = np.where(self.mask, fft2c(x), 0) - self.y
        g = 2.0 * ifft2c(np.where(self.mask, r, 0))
        if self.lam_tv:
            dx, dy = _grad(x)
            phi = np.sqrt(np.abs(dx) ** 2 + np.abs(dy) ** 2 + self.eps ** 2)
            g = g + self.lam_tv * _grad_adjoint(dx / phi, dy / phi)
        return g

    def nonsmooth(self, x):
        if not self.lam_w:
            return np.zeros(x.shape[:-2])
        return self.lam_w * np.abs(haar2(x, self.levels)).sum(axis=AXES)

    def total(self, x):
        return self.smooth(x) + self.nonsmooth(x)

    def prox(self, v, step):
        if not self.lam_w:
            return v
        t = (step * self.lam_w)[:, None, None]
        return ihaar2(soft_threshold(haar2(v, self.levels), t), self.levels)


def objective(x: np.ndarray, problem: ReconProblem) -> float:
    terms = _Terms(problem.kspace_frame[None], problem.mask[None], problem.lambda_wavelet,
                   problem.lambda_tv, problem.eps, problem.levels)
    return float(terms.total(x[None])[0])


def smooth_gradient(x: np.ndarray, problem: ReconProblem) -> np.ndarray:
    terms = _Terms(problem.kspace_frame[None], problem.mask[None], problem.lambda_wavelet,
                   problem.lambda_tv, problem.eps, problem.levels)
    return terms.smooth_grad(x[None])[0]


def smooth_value(x: np.ndarray, problem: ReconProblem) -> float:
    terms = _Terms(problem.kspace_frame[None], problem.mask[None], problem.lambda_wavelet,
                   problem.lambda_tv, problem.eps, problem.levels)
    return float(terms.smooth(x[None])[0])


def reconstruct_batch(kspace: np.ndarray, mask: np.ndarray, lambda_wavelet=1e-3, lambda_tv=5e-4,
                      max_iters=200, tolerance=1e-6, eps=1e-8, levels=3, normalize=True,
                      history=None):
    """Reconstruct a stack of (F, H, W) k-space frames.

    With ``normalize`` each frame's data is scaled to unit energy before
    solving (the weights are relative to that scale) and the result is
    scaled back. Returns (images, initial_objective, final_objective) with
    objectives in the normalized units. ``history``, if a list, receives
    (frame, iteration, objective) rows.
    """
    y = np.array(kspace, dtype=np.complex128)
    mask = np.broadcast_to(mask, y.shape)
    nf = y.shape[0]
    scale = np.ones(nf)
    if normalize:
        energy = np.sqrt((np.abs(y) ** 2).sum(axis=AXES))
        scale = np.where(energy > 0, energy, 1.0)
        y = y / scale[:, None, None]
    terms = _Terms(y, mask, lambda_wavelet, lambda_tv, eps, levels)

    x = ifft2c(y)
    f_x = terms.total(x)
    f0 = f_x.copy()
    z = x.copy()
    t = np.ones(nf)
    step = np.full(nf, 0.5)  # 1 / Lipschitz constant of the data-fit gradient
    active = np.ones(nf, dtype=bool)
    if history is not None:
        history.extend((int(i), 0, float(f_x[i])) for i in range(nf))

    for it in range(1, max_iters + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        sub = terms.sub(idx)
        xs, zs, fs, st = x[idx], z[idx], f_x[idx], step[idx]
        cand = sub.prox(zs - st[:, None, None] * sub.smooth_grad(zs), st)
        f_cand = sub.total(cand)
        ok = f_cand <= fs
        restart = ~ok
        if restart.any():
            r = np.flatnonzero(restart)
            sub_r = sub.sub(r)
            plain = sub_r.prox(xs[r] - st[r, None, None] * sub_r.smooth_grad(xs[r]), st[r])
            f_plain = sub_r.total(plain)
            good = f_plain <= fs[r]
            cand[r[good]] = plain[good]
            f_cand[r[good]] = f_plain[good]
            bad = r[~good]
            cand[bad] = xs[bad]
            f_cand[bad] = fs[bad]
            st[bad] *= 0.5
        if not np.all(np.isfinite(f_cand)):
            raise NumericalFailureError(f"non-finite objective at iteration {it}", iteration=it)

        t_old = np.where(restart, 1.0, t[idx])
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_old ** 2))
        momentum = ((t_old - 1.0) / t_new)[:, None, None]
        z[idx] = cand + momentum * (cand - xs)
        t[idx] = t_new
        rel = np.abs(fs - f_cand) / np.maximum(np.abs(fs), 1e-300)
        x[idx] = cand
        f_x[idx] = f_cand
        step[idx] = st
        # a rejected step (no movement) is not convergence; only stop on accepted ones
        moved = f_cand < fs
        done = moved & (rel < tolerance)
        done |= st < 1e-12
        active[idx[done]] = False
        if history is not None:
            history.extend((int(i), it, float(v)) for i, v in zip(idx, f_cand))

    return x * scale[:, None, None], f0, f_x


def reconstruct_frame(problem: ReconProblem) -> np.ndarray:
    img, _, _ = reconstruct_batch(problem.kspace_frame[None], problem.mask[None],
                                  problem.lambda_wavelet, problem.lambda_tv, problem.max_iters,
                                  problem.tolerance, problem.eps, problem.levels, normalize=False)
    return img[0]


def reconstruct_frames(kspace: np.ndarray, mask: np.ndarray, batch: int = 100, **kwargs):
    """Reconstruct all frames in batches; returns (images, f_initial, f_final)."""
    out = np.empty_like(kspace, dtype=np.complex128)
    f0 = np.empty(kspace.shape[0])
    f1 = np.empty(kspace.shape[0])
    for a in range(0, kspace.shape[0], batch):
        b = a + batch
        out[a:b], f0[a:b], f1[a:b] = reconstruct_batch(kspace[a:b], mask[a:b], **kwargs)
    return out, f0, f1


def write_history(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "iteration", "objective"])
        w.writerows(history)
