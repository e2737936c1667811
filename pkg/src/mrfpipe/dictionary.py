"""Parameter grid, fingerprint dictionary and the index -> parameter mapping."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .sequence import Schedule, TissueParams, simulate_batch

log = logging.getLogger(__name__)

ORDERING = "t1-outer/t2-middle/df-inner (row-major, df fastest)"


@dataclass(frozen=True)
class GridSpec:
    """Ranges as (start, stop, step) with inclusive stop.

    ``df`` is a list of such ranges; their union is sorted and deduplicated.
    """

    t1: tuple = (800.0, 2000.0, 20.0)
    t2: tuple = (20.0, 300.0, 10.0)
    df: tuple = ((-250.0, -90.0, 10.0), (-80.0, 80.0, 2.0), (90.0, 250.0, 10.0))

    def to_dict(self):
        return {"t1": list(self.t1), "t2": list(self.t2), "df": [list(r) for r in self.df]}


FULL_GRID = GridSpec()
DESK_GRID = GridSpec(t1=(800.0, 2000.0, 80.0), t2=(20.0, 300.0, 40.0),
                     df=((-4.0, 4.0, 0.4),))


def _arange_inclusive(start, stop, step):
    if step <= 0:
        raise InvalidArgumentError(f"grid step must be positive, got {step}")
    if stop < start:
        raise InvalidArgumentError(f"inverted grid range [{start}, {stop}]")
    n = int(round((stop - start) / step)) + 1
    return start + step * np.arange(n, dtype=np.float64)


@dataclass(frozen=True)
class ParameterGrid:
    t1_values: np.ndarray
    t2_values: np.ndarray
    df_values: np.ndarray

    def __post_init__(self):
        for name in ("t1_values", "t2_values", "df_values"):
            v = np.array(getattr(self, name), dtype=np.float64)
            if v.ndim != 1 or v.size == 0 or np.any(np.diff(v) <= 0):
                raise InvalidArgumentError(f"{name} must be nonempty and strictly ascending")
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @property
    def shape(self):
        return (self.t1_values.size, self.t2_values.size, self.df_values.size)

    def axis(self, name: str) -> np.ndarray:
        return {"t1": self.t1_values, "t2": self.t2_values, "df": self.df_values}[name]


def build_grid(spec: GridSpec = FULL_GRID) -> ParameterGrid:
    df = np.unique(np.concatenate([_arange_inclusive(*r) for r in spec.df]))
    return ParameterGrid(_arange_inclusive(*spec.t1), _arange_inclusive(*spec.t2), df)


def local_step(values: np.ndarray, x) -> np.ndarray:
    """Grid spacing around ``x``: the width of the grid cell containing it.

    Values outside the grid use the nearest end cell. A single-value axis
    has step 1 by convention.
    """
    x = np.asarray(x, dtype=np.float64)
    if values.size < 2:
        return np.ones_like(x)
    steps = np.diff(values)
    cell = np.clip(np.searchsorted(values, x, side="right") - 1, 0, steps.size - 1)
    return steps[cell]


def schedule_digest(schedule: Schedule) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(schedule.flip_angles).tobytes())
    h.update(np.ascontiguousarray(schedule.repetition_times).tobytes())
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class FingerprintDictionary:
    """K unit-norm atoms (rows) with their grid coordinates."""

    atoms: np.ndarray
    grid: ParameterGrid
    coords: np.ndarray
    schedule_id: str
    _lookup: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.atoms.setflags(write=False)
        self.coords.setflags(write=False)
        lookup = {tuple(int(c) for c in row): k for k, row in enumerate(self.coords)}
        object.__setattr__(self, "_lookup", lookup)

    @property
    def size(self) -> int:
        return self.atoms.shape[0]

    @property
    def n_points(self) -> int:
        return self.atoms.shape[1]

    @property
    def t1(self) -> np.ndarray:
        return self.grid.t1_values[self.coords[:, 0]]

    @property
    def t2(self) -> np.ndarray:
        return self.grid.t2_values[self.coords[:, 1]]

    @property
    def df(self) -> np.ndarray:
        return self.grid.df_values[self.coords[:, 2]]

    def params_of(self, indices):
        """Vectorized index -> (t1, t2, df) arrays."""
        idx = np.asarray(indices)
        c = self.coords[idx]
        return (self.grid.t1_values[c[..., 0]], self.grid.t2_values[c[..., 1]],
                self.grid.df_values[c[..., 2]])


def retained_coords(grid: ParameterGrid) -> np.ndarray:
    """(K, 3) grid coordinates in storage order, skipping T2 > T1."""
    i1, i2, i3 = np.meshgrid(np.arange(grid.shape[0]), np.arange(grid.shape[1]),
                             np.arange(grid.shape[2]), indexing="ij")
    coords = np.stack([i1.ravel(), i2.ravel(), i3.ravel()], axis=1)
    keep = grid.t2_values[coords[:, 1]] <= grid.t1_values[coords[:, 0]]
    return coords[keep]


def build_dictionary(grid: ParameterGrid, schedule: Schedule,
                     batch: int = 20000) -> FingerprintDictionary:
    """Simulate and normalize one atom per retained grid point."""
    coords = retained_coords(grid)

    atoms = np.empty((coords.shape[0], schedule.n_points), dtype=np.complex128)
    for start in range(0, coords.shape[0], batch):
        c = coords[start:start + batch]
        atoms[start:start + batch] = simulate_batch(grid.t1_values[c[:, 0]], grid.t2_values[c[:, 1]],
                                                    grid.df_values[c[:, 2]], schedule)
    norms = np.linalg.norm(atoms, axis=1)
    keep = norms > 0
    if not np.all(keep):
        for c in coords[~keep]:
            log.warning("excluding grid point %s: all-zero evolution", tuple(int(v) for v in c))
        atoms, coords, norms = atoms[keep], coords[keep], norms[keep]
    atoms /= norms[:, None]
    return FingerprintDictionary(atoms, grid, coords.astype(np.int64), schedule_digest(schedule))


def index_to_params(dictionary: FingerprintDictionary, k: int) -> TissueParams:
    if not 0 <= k < dictionary.size:
        raise IndexError(f"atom index {k} out of range [0, {dictionary.size})")
    t1, t2, df = dictionary.params_of(k)
    return TissueParams(float(t1), float(t2), float(df))


def params_to_index(dictionary: FingerprintDictionary, params: TissueParams) -> int:
    """Inverse mapping for parameters lying exactly on the grid."""
    key = []
    for name, value in (("t1", params.t1), ("t2", params.t2), ("df", params.df)):
        axis = dictionary.grid.axis(name)
        hit = np.flatnonzero(axis == value)
        if hit.size == 0:
            raise KeyError(f"{name}={value} is not a grid value")
        key.append(int(hit[0]))
    try:
        return dictionary._lookup[tuple(key)]
    except KeyError:
        raise KeyError(f"{params} is not a retained dictionary entry") from None
