"""Command line front end: ``mrfpipe <command> [options]``.

Exit codes: 0 success, 1 other failure, 2 configuration error,
3 numerical failure, 4 file format error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import arrayio
from .acquisition import (FrameSequence, PhantomSpec, make_mask, make_phantom, render_frames,
                          undersample, zero_fill_recon)
from .classifier import DecisionTree, TreeSet, train_labels, train_tree_set
from .config import ExperimentConfig, load_config
from .csrecon import reconstruct_frames, write_history
from .dictionary import FingerprintDictionary, ORDERING, build_dictionary, build_grid, schedule_digest
from .errors import ConfigError, FormatError, MRFError, NumericalFailureError
from .filterstage import FilterConfig, apply_adaptive_filter
from .matcher import benchmark, match_image
from .metrics import PARAMS, QualityReport, psnr, ssim
from .pipeline import run_experiment
from .sequence import Schedule, generate_schedule

log = logging.getLogger("mrfpipe")


def _out(args, cfg: ExperimentConfig) -> Path:
    out = Path(args.out or cfg["run"]["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _schedule(cfg):
    s = cfg["schedule"]
    return generate_schedule(cfg["seeds"]["schedule"], s["n_points"], (s["tr_min"], s["tr_max"]),
                             s["fa_noise_std"])


def _load_schedule(path, cfg):
    return Schedule.from_csv(path) if path else _schedule(cfg)


def _load_dictionary(path, cfg, schedule):
    grid = build_grid(cfg.grid_spec)
    if path is None:
        return build_dictionary(grid, schedule)
    d = Path(path)
    atoms = arrayio.load_array(d / "atoms.mrfa")
    coords = arrayio.load_array(d / "coords.mrfa").astype(np.int64)
    meta = json.loads((d / "dictionary.json").read_text())
    if meta["shape"] != list(grid.shape):
        raise ConfigError(f"dictionary at {d} has grid {meta['shape']}, config says {list(grid.shape)}")
    return FingerprintDictionary(atoms, grid, coords, meta["schedule_id"])


def _phantom_dir(path):
    d = Path(path)
    from .acquisition import ParameterMapSet
    return ParameterMapSet(*(arrayio.load_array(d / f"{k}.mrfa") for k in ("t1", "t2", "df")),
                           arrayio.load_array(d / "background.mrfa"))


def _spec(cfg):
    p = cfg["phantom"]
    return PhantomSpec(width=p["width"], height=p["height"], n_lesions=p["n_lesions"],
                       df_coverage=p["df_coverage"])


def _save_maps(d: Path, maps: dict):
    d.mkdir(parents=True, exist_ok=True)
    for k, v in maps.items():
        arrayio.save_array(d / f"{k}.mrfa", v)


def _load_maps(d):
    d = Path(d)
    return {p.stem: arrayio.load_array(p) for p in d.glob("*.mrfa")}


# --------------------------------------------------------------- commands

def cmd_schedule(args, cfg):
    out = _out(args, cfg)
    sch = _schedule(cfg)
    sch.to_csv(out / "schedule.csv")
    arrayio.save_array(out / "schedule.mrfa", sch.as_array())
    print(out / "schedule.csv")


def cmd_dict(args, cfg):
    out = _out(args, cfg)
    sch = _load_schedule(args.schedule, cfg)
    d = build_dictionary(build_grid(cfg.grid_spec), sch)
    arrayio.save_array(out / "atoms.mrfa", d.atoms)
    arrayio.save_array(out / "coords.mrfa", d.coords.astype(np.float64))
    (out / "dictionary.json").write_text(json.dumps({
        "grid": cfg.grid_spec.to_dict(), "shape": list(d.grid.shape), "atoms": d.size,
        "schedule_seed": cfg["seeds"]["schedule"], "schedule_id": schedule_digest(sch),
        "ordering": ORDERING, "format_version": arrayio.VERSION}, indent=2))
    print(f"{d.size} atoms -> {out}")


def cmd_phantom(args, cfg):
    out = _out(args, cfg)
    seed = cfg["seeds"]["phantom_train"] if args.preset == "train" else cfg.test_seeds[0]
    ph = make_phantom(_spec(cfg), seed, build_grid(cfg.grid_spec), args.preset)
    _save_maps(out, {"t1": ph.t1_map, "t2": ph.t2_map, "df": ph.df_map, "background": ph.background_mask})
    from .plotting import save_panel
    save_panel(out / "phantom.png", ph.maps(), {}, ph.background_mask, f"{args.preset} phantom {seed}")
    print(out)


def cmd_acquire(args, cfg):
    out = _out(args, cfg)
    ph = _phantom_dir(args.phantom)
    sch = _load_schedule(args.schedule, cfg)
    a = cfg["acquisition"]
    h, w = ph.shape
    mask = make_mask(w, h, sch.n_points, a["retained_fraction"], cfg["seeds"]["mask"], a["density_power"],
                     a["center_size"], a["shared_mask"])
    k = undersample(render_frames(ph, sch), mask, a["noise_std"], seed=cfg["seeds"]["mask"] + 1000)
    arrayio.save_array(out / "kspace.mrfa", k.frames)
    arrayio.save_array(out / "mask.mrfa", mask.masks)
    fr = mask.retained_fractions()
    print(f"retained fraction {fr.min():.4f}..{fr.max():.4f} -> {out}")


def cmd_recon(args, cfg):
    out = _out(args, cfg)
    k = arrayio.load_array(args.kspace)
    if args.zero_fill:
        arrayio.save_array(out / "frames.mrfa", zero_fill_recon(FrameSequence(k, "kspace")).frames)
        return
    mask = arrayio.load_array(args.mask)
    c = cfg["csrecon"]
    img, f0, f1 = reconstruct_frames(k, np.broadcast_to(mask, k.shape), batch=c["batch"],
                                     lambda_wavelet=c["lambda_wavelet"], lambda_tv=c["lambda_tv"],
                                     max_iters=c["max_iters"], tolerance=c["tolerance"], eps=c["eps"],
                                     levels=c["levels"])
    arrayio.save_array(out / "frames.mrfa", img)
    write_history(out / "objective.csv", [(i, 0, a) for i, a in enumerate(f0)]
                  + [(i, -1, b) for i, b in enumerate(f1)])
    print(out / "frames.mrfa")


def cmd_match(args, cfg):
    out = _out(args, cfg)
    sch = _load_schedule(args.schedule, cfg)
    d = _load_dictionary(args.dictionary, cfg, sch)
    frames = arrayio.load_array(args.frames)
    region = ~arrayio.load_array(Path(args.phantom) / "background.mrfa") if args.phantom \
        else np.ones(frames.shape[1:], bool)
    m = cfg["matcher"]
    mm = match_image(d, frames, region, mode=m["mode"], m=m["n_peaks"], min_separation=m["min_separation"],
                     pixel_block=m["pixel_block"], atom_block=m["atom_block"])
    _save_maps(out, {"t1": mm.t1, "t2": mm.t2, "df": mm.df, "best_similarity": mm.best_similarity,
                     "best_index": mm.best_index.astype(np.float64), "features": mm.features})
    print(out)


def cmd_train_tree(args, cfg):
    out = _out(args, cfg)
    maps = _load_maps(args.maps)
    ph = _phantom_dir(args.phantom)
    t = cfg["tree"]
    labels = train_labels(maps, ph.maps(), build_grid(cfg.grid_spec), ph.foreground, t["label_tolerance"])
    ts = train_tree_set(maps["features"], labels, ph.foreground, args.features, t["max_depth"] or None,
                        t["min_leaf"])
    for p, tree in ts.trees.items():
        tree.save(out / f"tree{args.features}_{p}.txt")
    print(out)


def cmd_filter(args, cfg):
    out = _out(args, cfg)
    maps = _load_maps(args.maps)
    bg = arrayio.load_array(Path(args.phantom) / "background.mrfa")
    fg = ~bg
    trees = TreeSet({p: DecisionTree.load(Path(args.trees) / f"tree{args.features}_{p}.txt") for p in PARAMS},
                    args.features)
    flags = trees.predict_maps(maps["features"], fg)
    fcfg = FilterConfig(**cfg["filter"])
    res = {}
    for p in PARAMS:
        r = apply_adaptive_filter(maps[p], flags[p], maps["best_similarity"], fcfg, bg)
        res[p] = r.image
        res[f"flags_{p}"] = flags[p]
        r.write_diagnostics(out / f"zero_weight_{p}.csv")
    _save_maps(out, res)
    print(out)


def cmd_evaluate(args, cfg):
    out = _out(args, cfg)
    ph = _phantom_dir(args.phantom)
    rep = QualityReport()
    for item in args.maps:
        name, _, path = item.rpartition("=")
        maps = _load_maps(path)
        for p in PARAMS:
            rep.add(name or Path(path).name, p, psnr(maps[p], ph.maps()[p], ph.foreground),
                    ssim(maps[p], ph.maps()[p], ph.foreground))
    rep.to_csv(out / "metrics.csv")
    print(rep.format_table())


def cmd_run(args, cfg):
    res = run_experiment(cfg, args.out, use_cache=not args.no_cache)
    print(res.report.format_table())
    print(f"artifacts in {res.out}")


def cmd_bench(args, cfg):
    out = _out(args, cfg)
    sch = _schedule(cfg)
    d = build_dictionary(build_grid(cfg.grid_spec), sch)
    rng = np.random.default_rng(cfg["seeds"]["mask"])
    x = rng.standard_normal((args.pixels, d.n_points)) + 1j * rng.standard_normal((args.pixels, d.n_points))
    rows = benchmark(d, x, tuple(args.blocks), args.repeats)
    lines = ["atom_block,seconds,throughput"] + [f"{r['atom_block']},{r['seconds']:.6f},{r['throughput']:.4g}"
                                               for r in rows]
    (out / "bench_match.csv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file overriding the profile")
    common.add_argument("--profile", choices=("desk", "paper"), default="desk")
    common.add_argument("--seed", type=int, help="override the seed the command uses")
    common.add_argument("--out", help="output directory")
    common.add_argument("--verbose", "-v", action="store_true")

    p = argparse.ArgumentParser(prog="mrfpipe", description="MRF dictionary matching experiments")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=func)
        return sp

    add("schedule", cmd_schedule, "generate the FA/TR schedule")
    sp = add("dict", cmd_dict, "build the fingerprint dictionary")
    sp.add_argument("--schedule", help="schedule CSV (default: generate from config)")
    sp = add("phantom", cmd_phantom, "make a parameter-map phantom")
    sp.add_argument("--preset", choices=("train", "test"), default="test")
    sp = add("acquire", cmd_acquire, "simulate undersampled k-space for a phantom")
    sp.add_argument("--phantom", required=True)
    sp.add_argument("--schedule")
    sp = add("recon", cmd_recon, "CS (or zero-fill) reconstruction of k-space frames")
    sp.add_argument("--kspace", required=True)
    sp.add_argument("--mask")
    sp.add_argument("--zero-fill", action="store_true")
    sp = add("match", cmd_match, "dictionary matching of reconstructed frames")
    sp.add_argument("--frames", required=True)
    sp.add_argument("--dictionary", help="directory written by 'dict' (default: rebuild)")
    sp.add_argument("--phantom", help="phantom directory; its foreground is the matching region")
    sp.add_argument("--schedule")
    sp = add("train-tree", cmd_train_tree, "train mismatch trees on matched maps of a phantom")
    sp.add_argument("--maps", required=True)
    sp.add_argument("--phantom", required=True)
    sp.add_argument("--features", type=int, choices=(1, 4, 8), default=8)
    sp = add("filter", cmd_filter, "predict mismatches and apply the adaptive filter")
    sp.add_argument("--maps", required=True)
    sp.add_argument("--trees", required=True)
    sp.add_argument("--phantom", required=True)
    sp.add_argument("--features", type=int, choices=(1, 4, 8), default=8)
    sp = add("evaluate", cmd_evaluate, "PSNR/SSIM of map sets against a phantom")
    sp.add_argument("--phantom", required=True)
    sp.add_argument("maps", nargs="+", help="NAME=DIR map directories")
    sp = add("run", cmd_run, "full experiment: metrics table, figures and manifest")
    sp.add_argument("--no-cache", action="store_true")
    sp = add("bench-match", cmd_bench, "throughput of the blocked similarity kernel")
    sp.add_argument("--pixels", type=int, default=256)
    sp.add_argument("--blocks", type=int, nargs="+", default=[256, 1024, 4096])
    sp.add_argument("--repeats", type=int, default=3)
    return p


_SEED_KEY = {"schedule": "schedule", "dict": "schedule", "acquire": "mask", "bench-match": "mask",
             "run": "schedule"}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.profile)
        if args.seed is not None:
            if args.command == "phantom":
                key = "phantom_train" if args.preset == "train" else "phantom_test"
            else:
                key = _SEED_KEY.get(args.command, "schedule")
            cfg = cfg.override("seeds", key, args.seed)
        args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailureError as exc:
        print(f"numerical failure{_stage(exc)}: {exc}", file=sys.stderr)
        return 3
    except FormatError as exc:
        print(f"format error{_stage(exc)}: {exc}", file=sys.stderr)
        return 4
    except (MRFError, OSError) as exc:
        print(f"error{_stage(exc)}: {exc}", file=sys.stderr)
        return 1
    return 0


def _stage(exc):
    stage = getattr(exc, "stage", None)
    return f" in stage {stage}" if stage else ""


if __name__ == "__main__":
    sys.exit(main())
