"""Acceptance suite at desk scale.

One PASS/FAIL line per criterion is printed in the terminal summary. The
full desk experiment runs once per session (fresh output directory, no
cache reuse) and several criteria read from it.
"""
import time

import numpy as np
import pytest

from mrfpipe import arrayio
from mrfpipe.acquisition import PhantomSpec, make_mask, make_phantom, render_frames, undersample, zero_fill_recon
from mrfpipe.classifier import entropy, train_tree
from mrfpipe.config import load_config
from mrfpipe.csrecon import ReconProblem, smooth_gradient, smooth_value
from mrfpipe.dictionary import DESK_GRID, build_dictionary, build_grid, local_step
from mrfpipe.filterstage import FilterConfig, apply_adaptive_filter, gaussian_filter_at
from mrfpipe.matcher import match_image, match_series
from mrfpipe.metrics import PARAMS, psnr, ssim
from mrfpipe.pipeline import manifest_digests, run_experiment
from mrfpipe.sequence import Schedule, generate_schedule, simulate_batch

from test_metrics import ssim_reference
from test_sequence import bloch_oracle


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    cfg = load_config()
    t0 = time.perf_counter()
    res = run_experiment(cfg, tmp_path_factory.mktemp("desk"), use_cache=False)
    res.extras["seconds"] = time.perf_counter() - t0
    return res


@pytest.fixture(scope="session")
def desk_setup():
    cfg = load_config()
    sch = generate_schedule(cfg["seeds"]["schedule"])
    grid = build_grid(DESK_GRID)
    return cfg, sch, grid, build_dictionary(grid, sch)


def test_c01_self_match(desk_setup, verdict):
    _, _, grid, d = desk_setup
    t0 = time.perf_counter()
    best, best_s, _ = match_series(d, d.atoms)
    dt = time.perf_counter() - t0
    exact = np.mean((best == np.arange(d.size)) & (np.abs(best_s - 2) <= 1e-9))
    ok = grid.shape == (16, 8, 21) and exact == 1.0 and dt < 60
    assert verdict("C01 self-match exactness", ok,
                   f"{d.size} atoms, {100 * exact:.2f}% exact, max |s-2| {np.abs(best_s - 2).max():.1e}, {dt:.1f}s")


def test_c02_bloch_oracles(desk_setup, verdict):
    _, sch, _, _ = desk_setup
    tr = sch.repetition_times
    t_echo = np.cumsum(tr) - tr / 2
    _, mz = simulate_batch(1234.0, 90.0, 7.0, Schedule(np.zeros(sch.n_points), tr), return_mz=True)
    e_ir = np.abs(mz[0] - (1 - 2 * np.exp(-t_echo / 1234.0))).max()
    fa = np.zeros(sch.n_points)
    fa[0] = 90.0
    sig = simulate_batch(1500.0, 87.0, 0.0, Schedule(fa, tr))[0]
    e_t2 = np.abs(np.abs(sig) - np.exp(-t_echo / 87.0)).max()
    rng = np.random.default_rng(0)
    t1, t2, df = rng.uniform(300, 2500, 100), rng.uniform(10, 300, 100), rng.uniform(-250, 250, 100)
    batch = simulate_batch(t1, t2, df, sch)
    e_mat = max(np.abs(batch[i] - bloch_oracle(t1[i], t2[i], df[i], sch)).max() for i in range(100))
    ok = e_ir <= 1e-9 and e_t2 <= 1e-9 and e_mat <= 1e-10
    assert verdict("C02 Bloch oracles", ok, f"IR {e_ir:.1e}, T2 decay {e_t2:.1e}, matrix {e_mat:.1e}")


def _full_sampling_maps(cfg, sch, grid, d, preset):
    ph = make_phantom(PhantomSpec(), cfg["seeds"]["phantom_train"], grid, preset)
    frames = render_frames(ph, sch)
    full = make_mask(64, 64, sch.n_points, 1.0)
    img = zero_fill_recon(undersample(frames, full)).frames
    return ph, match_image(d, img, ph.foreground)


def test_c03_noiseless_on_grid(desk_setup, verdict):
    cfg, sch, grid, d = desk_setup
    ph, mm = _full_sampling_maps(cfg, sch, grid, d, "train")
    fg = ph.foreground
    truth = ph.maps()
    correct = np.mean(np.all([mm.param_maps()[p][fg] == truth[p][fg] for p in PARAMS], axis=0))
    values = [psnr(mm.param_maps()[p], truth[p], fg) for p in PARAMS]
    ok = correct == 1.0 and all(v == 99.0 for v in values)
    assert verdict("C03 noiseless on-grid end-to-end", ok,
                   f"{100 * correct:.2f}% correct, PSNR {', '.join(f'{v:.1f}' for v in values)}")


def test_c04_dictionary_resolution(desk_setup, verdict):
    cfg, sch, grid, d = desk_setup
    ph, mm = _full_sampling_maps(cfg, sch, grid, d, "test")
    fg = ph.foreground
    est, truth = mm.param_maps(), ph.maps()
    within = {}
    for p in PARAMS:
        step = local_step(grid.axis(p), truth[p][fg])
        within[p] = np.mean(np.abs(est[p][fg] - truth[p][fg]) <= step * (1 + 1e-9))
    axis = grid.df_values
    tdf = truth["df"][fg]
    nearest = axis[np.abs(tdf[:, None] - axis[None, :]).argmin(axis=1)]
    mism = est["df"][fg] != nearest
    dist = np.abs(tdf - nearest) / local_step(axis, tdf)
    med = float(np.median(dist[mism])) if mism.any() else float("nan")
    ok = all(v >= 0.99 for v in within.values()) and med > 0.25
    assert verdict("C04 dictionary-resolution errors", ok,
                   ", ".join(f"{p} {100 * v:.1f}% within 1 step" for p, v in within.items())
                   + f", df-mismatched {int(mism.sum())} px, median distance {med:.3f} steps")


def test_c05_cs_solver(desk_run, verdict):
    f_ok = all(np.all(f1 <= f0) for f0, f1 in desk_run.extras["cs_objective"].values())

    rng = np.random.default_rng(1)
    mask = desk_run.extras["mask"].masks[0]
    k = np.where(mask, rng.standard_normal(mask.shape) + 1j * rng.standard_normal(mask.shape), 0)
    cfg = load_config()["csrecon"]
    pr = ReconProblem(k, mask, cfg["lambda_wavelet"], cfg["lambda_tv"], eps=cfg["eps"])
    worst = 0.0
    for _ in range(10):
        x = rng.standard_normal(mask.shape) + 1j * rng.standard_normal(mask.shape)
        e = rng.standard_normal(mask.shape) + 1j * rng.standard_normal(mask.shape)
        e /= np.linalg.norm(e)
        h = 1e-6
        fd = (smooth_value(x + h * e, pr) - smooth_value(x - h * e, pr)) / (2 * h)
        an = float(np.real(np.vdot(smooth_gradient(x, pr), e)))
        worst = max(worst, abs(fd - an) / abs(an))

    gains = np.concatenate([a - b for a, b in desk_run.frame_psnr.values()])
    ok = f_ok and worst <= 1e-5 and gains.min() >= 1.0
    assert verdict("C05 CS solver", ok,
                   f"monotone {f_ok}, gradient rel err {worst:.1e}, per-frame PSNR gain "
                   f"min {gains.min():.2f} / median {np.median(gains):.2f} dB")


def test_c06_table_ordering(desk_run, verdict):
    r = desk_run.report
    print("\n" + r.format_table())
    fails = []
    for p in PARAMS:
        for metric in ("psnr", "ssim"):
            get = getattr(r, metric)
            mrf, cs, t8 = get("MRF", p), get("CS", p), get("CS-Tree8AF", p)
            if not mrf < cs:
                fails.append(f"{p} {metric}: MRF {mrf:.3f} !< CS {cs:.3f}")
            if not cs <= t8:
                fails.append(f"{p} {metric}: CS {cs:.3f} !<= Tree8AF {t8:.3f}")
    m8 = r.mean_psnr("CS-Tree8AF")
    m14 = max(r.mean_psnr("CS-Tree1AF"), r.mean_psnr("CS-Tree4AF"))
    if not m8 >= m14:
        fails.append(f"mean PSNR Tree8AF {m8:.2f} < {m14:.2f}")
    secs = desk_run.extras["seconds"]
    if secs >= 600:
        fails.append(f"runtime {secs:.0f}s")
    assert verdict("C06 table ordering", not fails,
                   "; ".join(fails) if fails else f"runtime {secs:.0f}s")


def test_c07_decision_trees(desk_run, verdict):
    tr = desk_run.extras["train"]
    x_all = tr["features"][tr["region"]]
    notes = []
    full_ok = True
    for p in PARAMS:
        y_all = tr["labels"][p][tr["region"]].astype(int)
        # keep feature vectors whose label is unambiguous
        _, inv = np.unique(x_all, axis=0, return_inverse=True)
        inv = inv.ravel()
        mixed = np.bincount(inv, weights=y_all) % np.bincount(inv) != 0
        keep = ~mixed[inv]
        tree = train_tree(x_all[keep], y_all[keep], max_depth=None, min_leaf=1)
        full_ok &= bool(np.all(tree.predict_batch(x_all[keep]) == y_all[keep]))

    worst_gain = 0.0
    tree8 = desk_run.extras["trees"][8]
    for p in PARAMS:
        y = tr["labels"][p][tr["region"]].astype(int)
        t = tree8.trees[p]
        ids = {0: np.arange(y.size)}
        for nid, node in enumerate(t.nodes):
            if node.is_leaf:
                continue
            s = ids[nid]
            go = x_all[s, node.feature] <= node.threshold
            ids[node.left], ids[node.right] = s[go], s[~go]
            cnt = lambda a: [int((y[a] == 0).sum()), int((y[a] == 1).sum())]
            g = entropy(cnt(s)) - go.mean() * entropy(cnt(s[go])) - (~go).mean() * entropy(cnt(s[~go]))
            worst_gain = max(worst_gain, abs(g - node.gain))

    acc = desk_run.tree_accuracy["CS-Tree8AF"]
    beats = all(a > b for a, b in acc.values())
    notes.append("held-out " + ", ".join(f"{p} {a:.3f} vs {b:.3f}" for p, (a, b) in acc.items()))
    ok = full_ok and worst_gain <= 1e-12 and beats
    assert verdict("C07 decision trees", ok,
                   f"training fit {full_ok}, gain error {worst_gain:.1e}, " + "; ".join(notes))


def test_c08_filter(desk_run, verdict):
    fails = []
    ssim_notes = []
    cfg = FilterConfig(**load_config()["filter"])
    for seed, ph in desk_run.truth.items():
        bg, fg = ph.background_mask, ph.foreground
        cs = desk_run.maps[seed]["CS"]
        flags = desk_run.flags[seed]["CS-Tree8AF"]
        for p in PARAMS:
            f = flags[p]
            r = apply_adaptive_filter(cs[p], f, desk_run.similarity[seed], cfg, bg)
            done = f.copy()
            for rr, cc in r.zero_weight_pixels:
                done[rr, cc] = False
            if np.any(np.abs(r.weight_sums[done] - 1) > 1e-12):
                fails.append(f"{seed}/{p} weights")
            if np.any(r.image[done] < r.neighbor_min[done]) or np.any(r.image[done] > r.neighbor_max[done]):
                fails.append(f"{seed}/{p} range")
            if r.image[~f].tobytes() != cs[p][~f].tobytes():
                fails.append(f"{seed}/{p} unflagged changed")
            g = gaussian_filter_at(cs[p], f, cfg.sigma_d, cfg.window_radius, bg).image
            s_ad, s_g = ssim(r.image, ph.maps()[p], fg), ssim(g, ph.maps()[p], fg)
            ssim_notes.append(f"{p}@{seed} {s_ad:.4f}/{s_g:.4f}")
            if s_ad < s_g:
                fails.append(f"{seed}/{p} SSIM adaptive {s_ad:.4f} < gaussian {s_g:.4f}")
    assert verdict("C08 filter properties", not fails,
                   "; ".join(fails) if fails else "SSIM adaptive/gaussian " + ", ".join(ssim_notes))


def test_c09_metric_oracles(verdict):
    truth = np.zeros((10, 10))
    truth[0, 0] = 1.0
    est = truth + 0.1
    e20 = abs(psnr(est, truth) - 20.0)
    rng = np.random.default_rng(2)
    x = rng.random((32, 32))
    e_id = abs(ssim(x, x) - 1)
    t = rng.random((24, 24)) * 100
    e = t + rng.standard_normal((24, 24)) * 5
    mse = np.mean((e - t) ** 2)
    e_psnr = abs(psnr(e, t) - 10 * np.log10(t.max() ** 2 / mse))
    e_ssim = abs(ssim(e, t) - ssim_reference(e, t, t.max() - t.min()).mean())
    ok = e20 <= 1e-12 and e_id <= 1e-12 and e_psnr <= 1e-10 and e_ssim <= 1e-10
    assert verdict("C09 metric oracles", ok,
                   f"20 dB err {e20:.1e}, SSIM(x,x) err {e_id:.1e}, PSNR ref {e_psnr:.1e}, SSIM ref {e_ssim:.1e}")


def test_c10_determinism(desk_run, tmp_path, verdict):
    small = tmp_path / "small.ini"
    small.write_text("[schedule]\nn_points = 60\n[phantom]\nwidth = 32\nheight = 32\n"
                     "[csrecon]\nmax_iters = 30\n[seeds]\nphantom_test = 21\n")
    cfg = load_config(small)
    a = run_experiment(cfg, tmp_path / "a", use_cache=False)
    b = run_experiment(cfg, tmp_path / "b", use_cache=False)
    same = manifest_digests(a.manifest) == manifest_digests(b.manifest) and \
        a.manifest["outputs"] == b.manifest["outputs"]

    rng = np.random.default_rng(3)
    arrays = [rng.standard_normal((3, 4, 5)), rng.standard_normal(7) + 1j * rng.standard_normal(7),
              rng.random((6, 6)) > 0.5, np.array([np.nan, np.inf, -0.0])]
    trip = True
    for i, arr in enumerate(arrays):
        arrayio.save_array(tmp_path / f"{i}.mrfa", arr)
        back = arrayio.load_array(tmp_path / f"{i}.mrfa")
        trip &= back.dtype == arr.dtype and back.shape == arr.shape and back.tobytes() == arr.tobytes()

    m = desk_run.extras["mask"]
    dev = np.abs(m.retained_fractions() - m.target_retained_fraction).max()
    ok = same and trip and dev <= 0.02
    assert verdict("C10 determinism and persistence", ok,
                   f"manifest digests equal {same}, round trip {trip}, max mask fraction deviation {dev:.4f}")
