import numpy as np
import pytest

from mrfpipe.errors import InvalidArgumentError
from mrfpipe.filterstage import FilterConfig, apply_adaptive_filter, filter_weights, gaussian_filter_at


@pytest.fixture
def scene():
    rng = np.random.default_rng(0)
    values = rng.random((20, 20)) * 1000
    sim = 2 - rng.random((20, 20)) * 0.2
    flags = rng.random((20, 20)) < 0.2
    return values, flags, sim


def test_weight_formula():
    cfg = FilterConfig(1.5, 0.05, 2)
    w = filter_weights((3, 3), (4, 5), 1.97, cfg)
    assert w == pytest.approx(np.exp(-5 / 2.25) * np.exp(-0.0009 / 0.0025), rel=1e-12)
    conv = FilterConfig(1.5, 0.05, 2, conventional=True)
    assert filter_weights((3, 3), (4, 5), 1.97, conv) == pytest.approx(
        np.exp(-5 / 4.5) * np.exp(-0.0009 / 0.005), rel=1e-12)
    with pytest.raises(InvalidArgumentError):
        filter_weights((1, 1), (1, 1), 2.0, cfg)


def test_properties(scene):
    values, flags, sim = scene
    res = apply_adaptive_filter(values, flags, sim)
    f = flags
    assert np.all(np.abs(res.weight_sums[f] - 1) <= 1e-12)
    assert np.all(res.image[f] >= res.neighbor_min[f] - 1e-9)
    assert np.all(res.image[f] <= res.neighbor_max[f] + 1e-9)
    assert res.image[~f].tobytes() == values[~f].tobytes()


def test_matches_direct_loop(scene):
    values, flags, sim = scene
    cfg = FilterConfig(1.2, 0.08, 2)
    res = apply_adaptive_filter(values, flags, sim, cfg)
    h, w = values.shape
    for r, c in np.argwhere(flags)[:30]:
        num = den = 0.0
        for rr in range(r - 2, r + 3):
            for cc in range(c - 2, c + 3):
                if (rr, cc) == (r, c) or not (0 <= rr < h and 0 <= cc < w):
                    continue
                wt = filter_weights((r, c), (rr, cc), sim[rr, cc], cfg)
                num += wt * values[rr, cc]
                den += wt
        assert res.image[r, c] == pytest.approx(num / den, rel=1e-12)


def test_tiny_weights_do_not_underflow():
    values = np.arange(9.0).reshape(3, 3)
    flags = np.zeros((3, 3), bool)
    flags[1, 1] = True
    sim = np.full((3, 3), -1.0)  # weights ~ exp(-3600)
    res = apply_adaptive_filter(values, flags, sim)
    assert res.image[1, 1] == pytest.approx(4.0)
    assert res.zero_weight_pixels == []


def test_isolated_pixel_left_unchanged(tmp_path):
    values = np.zeros((5, 5))
    values[2, 2] = 7.0
    background = np.ones((5, 5), bool)
    background[2, 2] = False
    flags = ~background
    res = apply_adaptive_filter(values, flags, np.full((5, 5), 2.0), background=background)
    assert res.image[2, 2] == 7.0
    assert res.zero_weight_pixels == [(2, 2)]
    res.write_diagnostics(tmp_path / "z.csv")
    assert (tmp_path / "z.csv").read_text().splitlines() == ["row,col", "2,2"]


def test_background_excluded():
    values = np.full((5, 5), 100.0)
    background = np.zeros((5, 5), bool)
    background[:, 3:] = True
    values[background] = 0.0
    flags = np.zeros((5, 5), bool)
    flags[2, 2] = True
    res = apply_adaptive_filter(values, flags, np.full((5, 5), 2.0), background=background)
    assert res.image[2, 2] == pytest.approx(100.0)


def test_gaussian_variant_properties(scene):
    values, flags, _ = scene
    res = gaussian_filter_at(values, flags)
    assert np.all(np.abs(res.weight_sums[flags] - 1) <= 1e-12)
    assert res.image[~flags].tobytes() == values[~flags].tobytes()


def test_bad_config_and_shapes():
    with pytest.raises(InvalidArgumentError):
        FilterConfig(sigma_d=0)
    with pytest.raises(InvalidArgumentError):
        apply_adaptive_filter(np.zeros((3, 3)), np.zeros((3, 4), bool), np.zeros((3, 3)))
