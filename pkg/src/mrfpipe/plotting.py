"""PNG renderings of parameter maps (matplotlib, file output only)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

UNITS = {"t1": "T1 (ms)", "t2": "T2 (ms)", "df": "df (Hz)"}
CMAPS = {"t1": "viridis", "t2": "magma", "df": "coolwarm"}


def _limits(truth, param, fg):
    v = truth[fg] if fg.any() else truth.ravel()
    lo, hi = float(v.min()), float(v.max())
    if param == "df":
        m = max(abs(lo), abs(hi), 1e-6)
        return -m, m
    return 0.0, hi * 1.05 if hi > 0 else 1.0


def save_map(path, image, param, vmin, vmax, background=None):
    img = np.array(image, dtype=np.float64)
    if background is not None:
        img = np.ma.masked_array(img, background)
    cmap = plt.get_cmap(CMAPS[param]).copy()
    cmap.set_bad("black")
    plt.imsave(path, img, cmap=cmap, vmin=vmin, vmax=vmax)


def save_panel(path, truth_maps, variant_maps: dict, background, title=""):
    """Rows: ground truth then each variant; columns: t1, t2, df."""
    rows = [("truth", truth_maps)] + list(variant_maps.items())
    fig, axes = plt.subplots(len(rows), 3, figsize=(7.5, 2.3 * len(rows)), squeeze=False)
    fg = ~background
    for j, p in enumerate(("t1", "t2", "df")):
        lo, hi = _limits(truth_maps[p], p, fg)
        for i, (name, maps) in enumerate(rows):
            ax = axes[i, j]
            im = ax.imshow(np.ma.masked_array(maps[p], background), cmap=CMAPS[p], vmin=lo, vmax=hi)
            ax.set_xticks([])
            ax.set_yticks([])
            if j == 0:
                ax.set_ylabel(name, fontsize=8)
            if i == 0:
                ax.set_title(UNITS[p], fontsize=9)
        fig.colorbar(im, ax=axes[:, j], shrink=0.6)
    if title:
        fig.suptitle(title, fontsize=10)
    fig.savefig(path, dpi=100)
    plt.close(fig)


def save_flags(path, flags: dict, background):
    fig, axes = plt.subplots(1, 3, figsize=(7.5, 2.6))
    for ax, p in zip(axes, ("t1", "t2", "df")):
        img = np.where(background, 0.5, flags[p].astype(float))
        ax.imshow(img, cmap="gray", vmin=0, vmax=1)
        ax.set_title(f"{p} flagged: {int(flags[p].sum())}", fontsize=8)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.savefig(path, dpi=100)
    plt.close(fig)


def save_run_figures(outdir, truths: dict, maps: dict, flags: dict):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    for seed, ph in truths.items():
        bg = ph.background_mask
        fg = ph.foreground
        truth = ph.maps()
        save_panel(outdir / f"maps_test{seed}.png", truth, maps[seed], bg, f"test phantom {seed}")
        for p in ("t1", "t2", "df"):
            lo, hi = _limits(truth[p], p, fg)
            save_map(outdir / f"test{seed}_truth_{p}.png", truth[p], p, lo, hi, bg)
            for v, m in maps[seed].items():
                save_map(outdir / f"test{seed}_{v}_{p}.png", m[p], p, lo, hi, bg)
        for v, f in flags.get(seed, {}).items():
            save_flags(outdir / f"flags_test{seed}_{v}.png", f, bg)
