"""Experiment configuration: INI-style ``key = value`` files with sections.

Every key has a default in ``DEFAULTS``; a file only overrides what it
names. Unknown sections or keys are rejected so typos fail fast.

Documented keys::

    [seeds]        schedule, mask, phantom_train, phantom_test (comma list)
    [schedule]     n_points, tr_min, tr_max, fa_noise_std
    [grid]         t1, t2 (start,stop,step), df (start,stop,step; ...)
    [phantom]      width, height, n_lesions, df_coverage, train_preset
    [acquisition]  retained_fraction, density_power, center_size, shared_mask, noise_std
    [csrecon]      lambda_wavelet, lambda_tv, max_iters, tolerance, eps, levels, batch
    [matcher]      mode, n_peaks, min_separation, pixel_block, atom_block
    [tree]         max_depth (0 = unlimited), min_leaf, label_tolerance
    [filter]       sigma_d, sigma_s, window_radius, conventional
    [run]          variants (comma list), out
"""
from __future__ import annotations

import configparser
import copy
from dataclasses import dataclass, field

from .dictionary import DESK_GRID, FULL_GRID, GridSpec
from .errors import ConfigError
from .metrics import VARIANTS


def _fmt_range(r):
    return ",".join(f"{v:g}" for v in r)


def _grid_section(spec: GridSpec) -> dict:
    return {"t1": _fmt_range(spec.t1), "t2": _fmt_range(spec.t2),
            "df": "; ".join(_fmt_range(r) for r in spec.df)}


DEFAULTS = {
    "seeds": {"schedule": 1, "mask": 5, "phantom_train": 12, "phantom_test": "21,22"},
    "schedule": {"n_points": 500, "tr_min": 10.5, "tr_max": 14.0, "fa_noise_std": 5.0},
    "grid": _grid_section(DESK_GRID),
    "phantom": {"width": 64, "height": 64, "n_lesions": 3, "df_coverage": 0.9,
                "train_preset": "test"},
    "acquisition": {"retained_fraction": 0.3, "density_power": 3.0, "center_size": 8,
                    "shared_mask": True, "noise_std": 0.0},
    "csrecon": {"lambda_wavelet": 2e-5, "lambda_tv": 2e-4, "max_iters": 200, "tolerance": 1e-6,
                "eps": 1e-8, "levels": 3, "batch": 100},
    "matcher": {"mode": "real", "n_peaks": 4, "min_separation": 3, "pixel_block": 256,
                "atom_block": 4096},
    "tree": {"max_depth": 12, "min_leaf": 5, "label_tolerance": 0.5},
    "filter": {"sigma_d": 1.5, "sigma_s": 0.05, "window_radius": 2, "conventional": False},
    "run": {"variants": ",".join(VARIANTS), "out": "runs/desk"},
}

PROFILES = {
    "desk": {},
    "paper": {"grid": _grid_section(FULL_GRID), "run": {"out": "runs/paper"}},
}


def _convert(section, key, raw, default):
    try:
        if isinstance(default, bool):
            low = str(raw).strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return str(raw).strip()
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {type(default).__name__}") from None


def _parse_range(text, what):
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"{what}: expected start,stop,step, got {text!r}") from None
    if len(vals) != 3:
        raise ConfigError(f"{what}: expected start,stop,step, got {text!r}")
    return vals


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    def __post_init__(self):
        self.validate()

    def __getitem__(self, section) -> dict:
        return self.values[section]

    # typed views
    @property
    def grid_spec(self) -> GridSpec:
        g = self.values["grid"]
        df = tuple(_parse_range(part, "[grid] df") for part in g["df"].split(";") if part.strip())
        return GridSpec(_parse_range(g["t1"], "[grid] t1"), _parse_range(g["t2"], "[grid] t2"), df)

    @property
    def test_seeds(self) -> list:
        try:
            return [int(s) for s in str(self.values["seeds"]["phantom_test"]).split(",") if s.strip()]
        except ValueError:
            raise ConfigError("[seeds] phantom_test must be a comma list of integers") from None

    @property
    def variants(self) -> list:
        return [v.strip() for v in self.values["run"]["variants"].split(",") if v.strip()]

    def validate(self):
        if not self.variants:
            raise ConfigError("[run] variants must not be empty")
        unknown = [v for v in self.variants if v not in VARIANTS]
        if unknown:
            raise ConfigError(f"[run] unknown variants {unknown}; choose from {list(VARIANTS)}")
        if not self.test_seeds:
            raise ConfigError("[seeds] phantom_test needs at least one seed")
        self.grid_spec
        if self.values["phantom"]["train_preset"] not in ("train", "test"):
            raise ConfigError("[phantom] train_preset must be 'train' or 'test'")
        if self.values["matcher"]["mode"] not in ("real", "modulus"):
            raise ConfigError("[matcher] mode must be 'real' or 'modulus'")
        if not 0 < self.values["acquisition"]["retained_fraction"] <= 1:
            raise ConfigError("[acquisition] retained_fraction must be in (0, 1]")

    def override(self, section, key, value) -> "ExperimentConfig":
        if section not in DEFAULTS or key not in DEFAULTS[section]:
            raise ConfigError(f"unknown key [{section}] {key}")
        new = copy.deepcopy(self.values)
        new[section][key] = _convert(section, key, value, DEFAULTS[section][key])
        return ExperimentConfig(new)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.values)

    def dumps(self) -> str:
        lines = []
        for section, items in self.values.items():
            lines.append(f"[{section}]")
            lines += [f"{k} = {v}" for k, v in items.items()]
            lines.append("")
        return "\n".join(lines)


def _apply(values, updates, where):
    for section, items in updates.items():
        if section not in DEFAULTS:
            raise ConfigError(f"{where}: unknown section [{section}]")
        for key, raw in items.items():
            if key not in DEFAULTS[section]:
                raise ConfigError(f"{where}: unknown key [{section}] {key}")
            values[section][key] = _convert(section, key, raw, DEFAULTS[section][key])


def load_config(path=None, profile: str = "desk") -> ExperimentConfig:
    """Defaults, then the named profile, then the file at ``path``."""
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}")
    values = copy.deepcopy(DEFAULTS)
    _apply(values, PROFILES[profile], f"profile {profile}")
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, default_section="__unused__")
        parser.optionxform = str
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        _apply(values, {s: dict(parser[s]) for s in parser.sections()}, str(path))
    return ExperimentConfig(values)
