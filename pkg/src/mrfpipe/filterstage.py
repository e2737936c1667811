"""Adaptive replacement of pixels flagged as mismatched.

A flagged pixel p becomes the normalized weighted sum of its window
neighbours (p itself excluded), with

    w_j = exp(-||p - p_j||^2 / sigma_d^2) * exp(-(2 - s_j)^2 / sigma_s^2)

where s_j is the best match similarity at the neighbour. ``conventional``
switches the denominators to 2 sigma^2. All replacements read the
unfiltered map, so the result does not depend on traversal order.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class FilterConfig:
    sigma_d: float = 1.5
    sigma_s: float = 0.05
    window_radius: int = 2
    conventional: bool = False

    def __post_init__(self):
        if self.sigma_d <= 0 or self.sigma_s <= 0 or self.window_radius < 1:
            raise InvalidArgumentError("need sigma_d > 0, sigma_s > 0, window_radius >= 1")

    @property
    def _k(self):
        return 2.0 if self.conventional else 1.0


def filter_weights(center, neighbor, neighbor_similarity: float, config: FilterConfig) -> float:
    d2 = float(np.sum((np.asarray(center, float) - np.asarray(neighbor, float)) ** 2))
    if d2 == 0:
        raise InvalidArgumentError("neighbor must differ from center")
    k = config._k
    return float(np.exp(-d2 / (k * config.sigma_d ** 2))
                 * np.exp(-(2.0 - neighbor_similarity) ** 2 / (k * config.sigma_s ** 2)))


@dataclass
class FilterResult:
    image: np.ndarray
    zero_weight_pixels: list = field(default_factory=list)
    weight_sums: np.ndarray | None = None   # sum of normalized weights at filtered pixels
    neighbor_min: np.ndarray | None = None
    neighbor_max: np.ndarray | None = None

    def write_diagnostics(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "col"])
            w.writerows(self.zero_weight_pixels)


def _shifted(a, dy, dx, fill):
    """out[i, j] = a[i + dy, j + dx], ``fill`` outside the image."""
    h, w = a.shape
    out = np.full_like(a, fill)
    ys = slice(max(0, -dy), min(h, h - dy))
    xs = slice(max(0, -dx), min(w, w - dx))
    ys_src = slice(max(0, dy), min(h, h + dy))
    xs_src = slice(max(0, dx), min(w, w + dx))
    out[ys, xs] = a[ys_src, xs_src]
    return out


def _offsets(radius, include_center):
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy == 0 and dx == 0 and not include_center:
                continue
            yield dy, dx


def _weighted_replace(values, error_mask, log_w_fn, radius, background, include_center):
    values = np.asarray(values, dtype=np.float64)
    error_mask = np.asarray(error_mask, dtype=bool)
    if values.shape != error_mask.shape:
        raise InvalidArgumentError("map and error mask dimensions disagree")
    eligible = np.ones(values.shape, dtype=bool) if background is None else ~np.asarray(background)
    offs = list(_offsets(radius, include_center))
    logw = np.full((len(offs),) + values.shape, -np.inf)
    vals = np.zeros((len(offs),) + values.shape)
    for n, (dy, dx) in enumerate(offs):
        ok = _shifted(eligible, dy, dx, False)
        lw = log_w_fn(dy, dx)
        logw[n] = np.where(ok, lw, -np.inf)
        vals[n] = _shifted(values, dy, dx, 0.0)
    # normalize in log space so tiny similarity weights do not underflow to W = 0
    peak = logw.max(axis=0)
    has = np.isfinite(peak)
    w = np.exp(logw - np.where(has, peak, 0.0))
    total = w.sum(axis=0)
    wn = w / np.where(total > 0, total, 1.0)
    filtered = (wn * vals).sum(axis=0)

    used = w > 0
    lo = np.where(used, vals, np.inf).min(axis=0)
    hi = np.where(used, vals, -np.inf).max(axis=0)
    # rounding in the weighted sum can step one ulp past equal neighbours
    filtered = np.clip(filtered, lo, hi)

    target = error_mask & has
    out = values.copy()
    out[target] = filtered[target]
    zero = [(int(r), int(c)) for r, c in np.argwhere(error_mask & ~has)]
    sums = np.where(target, wn.sum(axis=0), np.nan)
    return FilterResult(out, zero, sums, np.where(target, lo, np.nan), np.where(target, hi, np.nan))


def apply_adaptive_filter(values, error_mask, similarity_map, config: FilterConfig = FilterConfig(),
                          background=None) -> FilterResult:
    """Replace flagged pixels; unflagged pixels are copied bit for bit.

    Background pixels never contribute as neighbours. Flagged pixels with
    no eligible neighbour are left unchanged and listed in the result.
    """
    sim = np.asarray(similarity_map, dtype=np.float64)
    if sim.shape != np.shape(values):
        raise InvalidArgumentError("similarity map dimensions disagree")
    k = config._k
    sim_term = -((2.0 - sim) ** 2) / (k * config.sigma_s ** 2)

    def log_w(dy, dx):
        return -(dy * dy + dx * dx) / (k * config.sigma_d ** 2) + _shifted(sim_term, dy, dx, -np.inf)

    return _weighted_replace(values, error_mask, log_w, config.window_radius, background, False)


def gaussian_filter_at(values, error_mask, sigma_d: float = 1.5, window_radius: int = 2,
                       background=None) -> FilterResult:
    """Plain spatial Gaussian (centre included) applied only at flagged pixels."""
    def log_w(dy, dx):
        return -(dy * dy + dx * dx) / (2.0 * sigma_d ** 2)

    return _weighted_replace(values, error_mask, log_w, window_radius, background, True)
