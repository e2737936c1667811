"""PSNR and SSIM for parameter maps."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve2d

PSNR_CAP = 99.0
PARAMS = ("t1", "t2", "df")
VARIANTS = ("MRF", "CS", "CS-Tree1AF", "CS-Tree4AF", "CS-Tree8AF")


def psnr(estimate, truth, region=None) -> float:
    """10 log10(peak^2 / MSE) over ``region``; peak = max |truth| there.

    Identical images give the cap value of 99 dB.
    """
    estimate = np.asarray(estimate)
    truth = np.asarray(truth)
    if estimate.shape != truth.shape:
        raise ValueError("image dimensions disagree")
    if region is None:
        region = np.ones(truth.shape, dtype=bool)
    if not region.any():
        raise ValueError("scoring region is empty")
    err = np.abs(estimate[region] - truth[region]) ** 2
    mse = float(err.mean())
    peak = float(np.abs(truth[region]).max())
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak ** 2 / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-ax ** 2 / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim_map(estimate, truth, data_range=None, size=11, sigma=1.5, k1=0.01, k2=0.03):
    """Local SSIM at every position where the full window fits ('valid')."""
    x = np.asarray(estimate, dtype=np.float64)
    y = np.asarray(truth, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("image dimensions disagree")
    if min(x.shape) < size:
        raise ValueError(f"images must be at least {size}x{size}")
    if data_range is None:
        data_range = float(y.max() - y.min())
    w = gaussian_window(size, sigma)
    filt = lambda img: convolve2d(img, w[::-1, ::-1], mode="valid")
    mu_x, mu_y = filt(x), filt(y)
    sxx = filt(x * x) - mu_x ** 2
    syy = filt(y * y) - mu_y ** 2
    sxy = filt(x * y) - mu_x * mu_y
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (sxx + syy + c2)
    return num / den


def ssim(estimate, truth, region=None, data_range=None, size=11, sigma=1.5, k1=0.01, k2=0.03) -> float:
    """Mean local SSIM; with ``region``, averaged over window centres inside it."""
    smap = ssim_map(estimate, truth, data_range, size, sigma, k1, k2)
    if region is None:
        return float(smap.mean())
    r = size // 2
    inner = np.asarray(region)[r:region.shape[0] - r, r:region.shape[1] - r]
    if not inner.any():
        raise ValueError("scoring region has no valid window centres")
    return float(smap[inner].mean())


@dataclass
class QualityReport:
    """rows[variant][param] = (psnr_db, ssim)."""

    rows: dict = field(default_factory=dict)

    def add(self, variant, param, psnr_db, ssim_value):
        self.rows.setdefault(variant, {})[param] = (float(psnr_db), float(ssim_value))

    def psnr(self, variant, param):
        return self.rows[variant][param][0]

    def ssim(self, variant, param):
        return self.rows[variant][param][1]

    def mean_psnr(self, variant):
        return float(np.mean([self.rows[variant][p][0] for p in PARAMS]))

    @classmethod
    def average(cls, reports):
        out = cls()
        for variant in reports[0].rows:
            for p in reports[0].rows[variant]:
                out.add(variant, p, np.mean([r.psnr(variant, p) for r in reports]),
                        np.mean([r.ssim(variant, p) for r in reports]))
        return out

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variant"] + [f"{p}_{m}" for p in PARAMS for m in ("psnr_db", "ssim")])
            for variant in [v for v in VARIANTS if v in self.rows] + \
                           [v for v in self.rows if v not in VARIANTS]:
                vals = []
                for p in PARAMS:
                    ps, ss = self.rows[variant].get(p, (float("nan"), float("nan")))
                    vals += [f"{ps:.4f}", f"{ss:.4f}"]
                w.writerow([variant] + vals)

    @classmethod
    def from_csv(cls, path):
        out = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                for p in PARAMS:
                    out.add(row["variant"], p, float(row[f"{p}_psnr_db"]), float(row[f"{p}_ssim"]))
        return out

    def format_table(self) -> str:
        lines = [f"{'':12s}" + "".join(f"{p:>16s}" for p in PARAMS)]
        for variant in self.rows:
            cells = "".join(f"{self.psnr(variant, p):8.2f} / {self.ssim(variant, p):5.3f}"
                            for p in PARAMS)
            lines.append(f"{variant:12s}{cells}")
        return "\n".join(lines)
