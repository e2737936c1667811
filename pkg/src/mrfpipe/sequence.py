"""Acquisition schedule and IR-bSSFP signal simulation.

Conventions used by every simulated evolution (dictionary, phantoms):

* magnetization starts at equilibrium (0, 0, 1) and is inverted ideally
  at t = 0, immediately before the first excitation;
* excitation ``i`` rotates about the y axis by ``FA[i] * (-1)**i`` degrees,
  using R_y(a) = [[cos a, 0, sin a], [0, 1, 0], [-sin a, 0, cos a]];
* between pulses the magnetization relaxes and precesses about z by
  ``+2*pi*df*dt`` (Mx + iMy is multiplied by exp(+i*phi));
* sample ``i`` is Mx + iMy at the echo, TE = TR[i] / 2.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSignalError, InvalidArgumentError

def _uniforms(bitgen: np.random.PCG64, n: int) -> np.ndarray:
    # 53-bit doubles in [0, 1) from the raw PCG64 stream
    raw = bitgen.random_raw(n)
    return (raw >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def _gaussians(bitgen: np.random.PCG64, n: int) -> np.ndarray:
    # Box-Muller, cosine branch only: two uniforms per normal draw
    u = _uniforms(bitgen, 2 * n).reshape(n, 2)
    return np.sqrt(-2.0 * np.log1p(-u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])


@dataclass(frozen=True)
class Schedule:
    """Per-excitation flip angles (degrees) and repetition times (ms)."""

    flip_angles: np.ndarray
    repetition_times: np.ndarray
    seed: int = 0

    def __post_init__(self):
        fa = np.array(self.flip_angles, dtype=np.float64)
        tr = np.array(self.repetition_times, dtype=np.float64)
        if fa.ndim != 1 or fa.shape != tr.shape:
            raise InvalidArgumentError("flip_angles and repetition_times must be 1-D of equal length")
        if fa.size == 0:
            raise InvalidArgumentError("schedule must have at least one point")
        if not np.all(np.isfinite(fa)) or not np.all(np.isfinite(tr)) or np.any(tr <= 0):
            raise InvalidArgumentError("schedule values must be finite with TR > 0")
        fa.setflags(write=False)
        tr.setflags(write=False)
        object.__setattr__(self, "flip_angles", fa)
        object.__setattr__(self, "repetition_times", tr)

    @property
    def n_points(self) -> int:
        return self.flip_angles.size

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "FA_deg", "TR_ms"])
            for i, (fa, tr) in enumerate(zip(self.flip_angles, self.repetition_times)):
                writer.writerow([i, repr(float(fa)), repr(float(tr))])

    @classmethod
    def from_csv(cls, path, seed: int = 0) -> "Schedule":
        fa, tr = [], []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                fa.append(float(row["FA_deg"]))
                tr.append(float(row["TR_ms"]))
        return cls(np.array(fa), np.array(tr), seed)

    def as_array(self) -> np.ndarray:
        """(N, 2) array of [FA_deg, TR_ms] rows for the array format."""
        return np.stack([self.flip_angles, self.repetition_times], axis=1)


def flip_angle_curve(n_points: int, noise: np.ndarray | None = None) -> np.ndarray:
    """Deterministic part of the flip-angle train plus an optional noise term.

    For ``n_points == 500`` the segments are [0, 250], [251, 300] (pause) and
    [301, 499]; other lengths scale the segment boundaries proportionally.
    Negative values are clamped to zero.
    """
    t = np.arange(n_points, dtype=np.float64)
    eta = np.zeros(n_points) if noise is None else np.asarray(noise, dtype=np.float64)
    scale = n_points / 500.0
    first_end = int(np.floor(250 * scale))
    pause_end = int(np.floor(300 * scale))
    fa = np.zeros(n_points)
    seg1 = t <= first_end
    seg3 = t > pause_end
    fa[seg1] = 10.0 + np.sin(2 * np.pi * t[seg1] / 500.0) * 50.0 + eta[seg1]
    fa[seg3] = 5.0 + np.sin(2 * np.pi * t[seg3] / 200.0) * 25.0 + eta[seg3]
    return np.maximum(fa, 0.0)


def generate_schedule(seed: int, n_points: int = 500, tr_range=(10.5, 14.0),
                      fa_noise_std: float = 5.0) -> Schedule:
    """Pseudorandomized FA/TR train.

    Randomness comes from PCG64 seeded with ``seed``: first ``n_points``
    uniform TR draws, then ``n_points`` Box-Muller normals for the FA noise.
    """
    if n_points < 1:
        raise InvalidArgumentError(f"n_points must be >= 1, got {n_points}")
    bitgen = np.random.PCG64(seed)
    lo, hi = tr_range
    tr = lo + (hi - lo) * _uniforms(bitgen, n_points)
    eta = fa_noise_std * _gaussians(bitgen, n_points)
    return Schedule(flip_angle_curve(n_points, eta), tr, seed)


@dataclass(frozen=True)
class TissueParams:
    t1: float
    t2: float
    df: float

    def __post_init__(self):
        if not (self.t1 > 0 and self.t2 > 0):
            raise InvalidArgumentError(f"T1 and T2 must be positive: {self}")


@dataclass(frozen=True)
class SignalEvolution:
    samples: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        s = np.array(self.samples, dtype=np.complex128)
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    def __len__(self):
        return self.samples.size


def simulate_batch(t1, t2, df, schedule: Schedule, return_mz: bool = False):
    """Vectorized Bloch recursion for many tissues at once.

    ``t1``, ``t2`` (ms) and ``df`` (Hz) broadcast to a common 1-D shape.
    Returns an (n_tissues, N) complex array of echo samples; with
    ``return_mz`` also the (n_tissues, N) longitudinal magnetization at
    each echo.
    """
    t1, t2, df = np.broadcast_arrays(*(np.atleast_1d(np.asarray(v, dtype=np.float64))
                                       for v in (t1, t2, df)))
    n = schedule.n_points
    alpha = np.deg2rad(schedule.flip_angles) * np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    ca, sa = np.cos(alpha), np.sin(alpha)
    half = schedule.repetition_times / 2.0

    mxy = np.zeros(t1.shape, dtype=np.complex128)
    mz = -np.ones(t1.shape)
    out = np.empty(t1.shape + (n,), dtype=np.complex128)
    mz_out = np.empty(t1.shape + (n,)) if return_mz else None

    for i in range(n):
        dt = half[i]
        e1 = np.exp(-dt / t1)
        r1 = 1.0 - e1
        e2 = np.exp(-dt / t2) * np.exp(2j * np.pi * df * dt * 1e-3)
        mx, my = mxy.real, mxy.imag
        mx_new = mx * ca[i] + mz * sa[i]
        mz = -mx * sa[i] + mz * ca[i]
        mxy = (mx_new + 1j * my) * e2
        mz = mz * e1 + r1
        out[..., i] = mxy
        if return_mz:
            mz_out[..., i] = mz
        mxy = mxy * e2
        mz = mz * e1 + r1
    if return_mz:
        return out, mz_out
    return out


def simulate_evolution(params: TissueParams, schedule: Schedule) -> SignalEvolution:
    samples = simulate_batch(params.t1, params.t2, params.df, schedule)[0]
    return SignalEvolution(samples, normalized=False)


def normalize(evolution: SignalEvolution) -> SignalEvolution:
    s = evolution.samples
    norm = np.linalg.norm(s)
    if norm == 0 or not np.isfinite(norm):
        raise DegenerateSignalError("cannot normalize an all-zero signal evolution")
    return SignalEvolution(s / norm, normalized=True)


def normalize_rows(x: np.ndarray):
    """Unit-normalize each row; returns (normalized, norms). Zero rows stay zero."""
    norms = np.linalg.norm(x, axis=-1)
    safe = np.where(norms > 0, norms, 1.0)
    return x / safe[..., None], norms
