"""Ground-truth phantoms, per-time-point images, k-space masking."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dictionary import ParameterGrid
from .errors import InvalidArgumentError
from .sequence import Schedule, simulate_batch

log = logging.getLogger(__name__)

AXES = (-2, -1)


def fft2c(x: np.ndarray) -> np.ndarray:
    """Centered unitary 2-D DFT over the last two axes."""
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(x, axes=AXES), norm="ortho"), axes=AXES)


def ifft2c(k: np.ndarray) -> np.ndarray:
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(k, axes=AXES), norm="ortho"), axes=AXES)


# ---------------------------------------------------------------- phantoms

@dataclass(frozen=True)
class TissueClass:
    name: str
    t1: float
    t2: float


@dataclass(frozen=True)
class PhantomSpec:
    width: int = 64
    height: int = 64
    rim: TissueClass = TissueClass("rim", 1200.0, 180.0)
    gray: TissueClass = TissueClass("gray", 1350.0, 100.0)
    white: TissueClass = TissueClass("white", 900.0, 60.0)
    csf: TissueClass = TissueClass("csf", 1950.0, 280.0)
    lesion: TissueClass = TissueClass("lesion", 1600.0, 220.0)
    n_lesions: int = 3
    # fraction of the grid's df span covered by the off-resonance field
    df_coverage: float = 0.9

    def classes(self):
        return [self.rim, self.gray, self.white, self.csf, self.lesion]


@dataclass
class ParameterMapSet:
    t1_map: np.ndarray
    t2_map: np.ndarray
    df_map: np.ndarray
    background_mask: np.ndarray

    def __post_init__(self):
        shape = self.background_mask.shape
        if not all(m.shape == shape for m in (self.t1_map, self.t2_map, self.df_map)):
            raise InvalidArgumentError("parameter maps must share dimensions")

    @property
    def shape(self):
        return self.background_mask.shape

    @property
    def foreground(self) -> np.ndarray:
        return ~self.background_mask

    def maps(self) -> dict:
        return {"t1": self.t1_map, "t2": self.t2_map, "df": self.df_map}


def _ellipse(x, y, cx, cy, a, b, theta=0.0):
    c, s = np.cos(theta), np.sin(theta)
    xr = (x - cx) * c + (y - cy) * s
    yr = -(x - cx) * s + (y - cy) * c
    return (xr / a) ** 2 + (yr / b) ** 2 <= 1.0


def _label_image(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    """Integer class image: 0 background, then 1 + index into spec.classes()."""
    ys, xs = np.mgrid[0:spec.height, 0:spec.width]
    x = (xs + 0.5) / spec.width * 2 - 1
    y = (ys + 0.5) / spec.height * 2 - 1
    labels = np.zeros((spec.height, spec.width), dtype=np.int64)
    labels[_ellipse(x, y, 0, 0, 0.92, 0.80)] = 1
    labels[_ellipse(x, y, 0, 0, 0.80, 0.68)] = 2
    labels[_ellipse(x, y, 0, 0.02, 0.60, 0.46)] = 3
    labels[_ellipse(x, y, -0.2, 0.0, 0.1, 0.26, np.deg2rad(20))] = 4
    labels[_ellipse(x, y, 0.2, 0.0, 0.1, 0.26, np.deg2rad(-20))] = 4
    for _ in range(spec.n_lesions):
        ang = rng.uniform(0, 2 * np.pi)
        rad = rng.uniform(0.3, 0.45)
        cx, cy = rad * np.cos(ang), 0.7 * rad * np.sin(ang)
        labels[_ellipse(x, y, cx, cy, 0.07, 0.07)] = 5
    return labels


def _df_field(spec: PhantomSpec, rng: np.random.Generator, lo: float, hi: float) -> np.ndarray:
    ys, xs = np.mgrid[0:spec.height, 0:spec.width]
    x = (xs + 0.5) / spec.width * 2 - 1
    y = (ys + 0.5) / spec.height * 2 - 1
    c = rng.normal(size=6)
    f = c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * y * y + c[5] * x * y
    f = (f - f.min()) / (f.max() - f.min())
    return lo + (hi - lo) * f


def _snap(values: np.ndarray, target: float) -> float:
    return float(values[np.argmin(np.abs(values - target))])


def _midpoint(values: np.ndarray, target: float) -> float:
    """Midpoint of the grid cell whose lower edge is nearest to ``target``."""
    if values.size < 2:
        return float(values[0])
    i = min(int(np.argmin(np.abs(values - target))), values.size - 2)
    return float(0.5 * (values[i] + values[i + 1]))


def make_phantom(spec: PhantomSpec, seed: int, grid: ParameterGrid | None = None,
                 preset: str = "train", strict: bool = False) -> ParameterMapSet:
    """Nested-ellipse brain-like phantom with a smooth off-resonance field.

    ``train``: every (T1, T2, df) value lies on a grid point.
    ``test``: T1 and T2 sit at midpoints between grid values and the
    off-resonance field is continuous.
    ``raw``: class values as given, continuous field (no grid needed).
    """
    if spec.width < 16 or spec.height < 16:
        raise InvalidArgumentError("phantom must be at least 16x16")
    if preset not in ("train", "test", "raw"):
        raise InvalidArgumentError(f"unknown phantom preset {preset!r}")
    if preset != "raw" and grid is None:
        raise InvalidArgumentError(f"preset {preset!r} needs a parameter grid")
    rng = np.random.default_rng(seed)
    labels = _label_image(spec, rng)
    if grid is not None:
        lo, hi = grid.df_values[0], grid.df_values[-1]
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo) * spec.df_coverage
        df = _df_field(spec, rng, mid - half, mid + half)
    else:
        df = _df_field(spec, rng, -50.0, 50.0)

    t1 = np.zeros(labels.shape)
    t2 = np.zeros(labels.shape)
    for k, cls in enumerate(spec.classes(), start=1):
        a, b = cls.t1, cls.t2
        if grid is not None:
            out_of_range = not (grid.t1_values[0] <= a <= grid.t1_values[-1]
                                and grid.t2_values[0] <= b <= grid.t2_values[-1])
            if out_of_range:
                if strict:
                    raise InvalidArgumentError(f"class {cls.name} outside dictionary range")
                log.warning("class %s (%.0f, %.0f) outside dictionary range", cls.name, a, b)
        if preset == "train":
            a, b = _snap(grid.t1_values, a), _snap(grid.t2_values, b)
        elif preset == "test":
            a, b = _midpoint(grid.t1_values, a), _midpoint(grid.t2_values, b)
        if b > a:
            raise InvalidArgumentError(f"class {cls.name}: T2 > T1")
        t1[labels == k] = a
        t2[labels == k] = b
    if preset == "train":
        idx = np.abs(df[..., None] - grid.df_values).argmin(axis=-1)
        df = grid.df_values[idx]
    background = labels == 0
    df = np.where(background, 0.0, df)
    return ParameterMapSet(t1, t2, df, background)


# ------------------------------------------------------------------ frames

@dataclass
class FrameSequence:
    frames: np.ndarray  # (N, H, W) complex
    domain: str = "image"

    def __post_init__(self):
        if self.domain not in ("image", "kspace"):
            raise InvalidArgumentError(f"unknown frame domain {self.domain!r}")
        if self.frames.ndim != 3:
            raise InvalidArgumentError("frames must be an (N, H, W) array")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    def pixel_series(self) -> np.ndarray:
        """(H*W, N) per-pixel time series."""
        n = self.frames.shape[0]
        return self.frames.reshape(n, -1).T


def render_frames(maps: ParameterMapSet, schedule: Schedule) -> FrameSequence:
    fg = maps.foreground
    h, w = maps.shape
    frames = np.zeros((schedule.n_points, h, w), dtype=np.complex128)
    if fg.any():
        triples = np.stack([maps.t1_map[fg], maps.t2_map[fg], maps.df_map[fg]], axis=1)
        uniq, inverse = np.unique(triples, axis=0, return_inverse=True)
        evol = simulate_batch(uniq[:, 0], uniq[:, 1], uniq[:, 2], schedule)
        frames[:, fg] = evol[inverse.ravel()].T
    return FrameSequence(frames, "image")


# ------------------------------------------------------------------- masks

@dataclass
class SamplingMask:
    masks: np.ndarray  # (N, H, W) bool
    target_retained_fraction: float
    center_size: int = 8

    def retained_fractions(self) -> np.ndarray:
        return self.masks.reshape(self.masks.shape[0], -1).mean(axis=1)


def _center_block(h, w, size):
    block = np.zeros((h, w), dtype=bool)
    r0, c0 = h // 2 - size // 2, w // 2 - size // 2
    block[max(r0, 0):r0 + size, max(c0, 0):c0 + size] = True
    return block


def density(h: int, w: int, power: float = 3.0) -> np.ndarray:
    """Polynomial variable-density profile (1 - r/r_max)**power."""
    ky = (np.arange(h) - h // 2) / (h / 2)
    kx = (np.arange(w) - w // 2) / (w / 2)
    r = np.hypot(ky[:, None], kx[None, :])
    return (1.0 - r / r.max()) ** power


def _scale_for(pdf: np.ndarray, target: float) -> float:
    lo, hi = 0.0, 1.0
    while np.minimum(1.0, hi * pdf).sum() < target and hi < 1e12:
        hi *= 2.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if np.minimum(1.0, mid * pdf).sum() < target:
            lo = mid
        else:
            hi = mid
    return hi


def make_mask(width: int, height: int, n_frames: int, retained_fraction: float = 0.3,
              seed: int = 0, power: float = 3.0, center_size: int = 8,
              shared: bool = False) -> SamplingMask:
    """Variable-density random Cartesian masks, one per frame.

    The realized count per frame is corrected to round(fraction * H * W).
    ``shared`` draws a single mask and repeats it for every frame.
    """
    if not 0 < retained_fraction <= 1:
        raise InvalidArgumentError(f"retained_fraction must be in (0, 1], got {retained_fraction}")
    n_pix = width * height
    center = _center_block(height, width, center_size)
    target = int(round(retained_fraction * n_pix))
    if target < center.sum():
        raise InvalidArgumentError("retained fraction smaller than the fully sampled center block")
    if target == n_pix:
        return SamplingMask(np.ones((n_frames, height, width), dtype=bool), retained_fraction, center_size)

    pdf = density(height, width, power)
    outer = ~center
    prob = np.zeros_like(pdf)
    prob[outer] = np.minimum(1.0, _scale_for(pdf[outer], target - center.sum()) * pdf[outer])
    # zero-density corners are still reachable by the top-up step
    weights = np.where(outer, np.maximum(pdf, 1e-12), 0.0).ravel()

    rng = np.random.default_rng(seed)
    draws = 1 if shared else n_frames
    masks = np.empty((draws, height, width), dtype=bool)
    for f in range(draws):
        m = (rng.random((height, width)) < prob) | center
        flat = m.ravel()
        count = int(flat.sum())
        if count > target:
            cand = np.flatnonzero(flat & outer.ravel())
            flat[rng.choice(cand, count - target, replace=False)] = False
        elif count < target:
            cand = np.flatnonzero(~flat)
            p = weights[cand] / weights[cand].sum()
            flat[rng.choice(cand, target - count, replace=False, p=p)] = True
        masks[f] = flat.reshape(height, width)
    if shared:
        masks = np.repeat(masks, n_frames, axis=0)
    return SamplingMask(masks, retained_fraction, center_size)


def undersample(frames: FrameSequence, mask: SamplingMask, noise_std: float = 0.0,
                seed: int | None = None) -> FrameSequence:
    """Unitary DFT of every frame, then zero the non-retained samples.

    ``noise_std`` adds complex Gaussian noise (per real component) to the
    retained samples; off by default.
    """
    if frames.domain != "image":
        raise InvalidArgumentError("undersample expects image-domain frames")
    if frames.frames.shape != mask.masks.shape:
        raise InvalidArgumentError(
            f"frame shape {frames.frames.shape} does not match mask shape {mask.masks.shape}")
    k = fft2c(frames.frames)
    if noise_std > 0:
        rng = np.random.default_rng(seed)
        k = k + noise_std * (rng.standard_normal(k.shape) + 1j * rng.standard_normal(k.shape))
    k[~mask.masks] = 0
    return FrameSequence(k, "kspace")


def zero_fill_recon(kspace: FrameSequence) -> FrameSequence:
    if kspace.domain != "kspace":
        raise InvalidArgumentError("zero_fill_recon expects k-space frames")
    return FrameSequence(ifft2c(kspace.frames), "image")
