"""Dictionary matching: similarities, best match, and top-peak features.

Similarity of a unit-norm measurement x with atom D_k is
``s_k = D_k^H x + x^H D_k = 2 Re(D_k^H x)`` and lies in [-2, 2]. The
``modulus`` mode uses ``2 |D_k^H x|`` instead, which ignores a global
phase on x.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .dictionary import FingerprintDictionary
from .errors import ContractViolationError
from .sequence import SignalEvolution, TissueParams

PAD_VALUE = -2.0
PAD_INDEX = -1.0
NORM_TOL = 1e-9


@dataclass(frozen=True)
class SimilarityProfile:
    values: np.ndarray
    pixel_id: tuple = ()


@dataclass(frozen=True)
class MatchResult:
    best_index: int
    best_similarity: float
    params: TissueParams


@dataclass(frozen=True)
class PeakFeatures:
    peak_values: np.ndarray
    peak_indices_normalized: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.peak_values, self.peak_indices_normalized])


def _split_atoms(dictionary: FingerprintDictionary):
    atoms = dictionary.atoms
    return np.ascontiguousarray(atoms.real), np.ascontiguousarray(atoms.imag)


def similarities(dictionary: FingerprintDictionary, x: np.ndarray, mode: str = "real",
                 atom_block: int = 4096, _parts=None) -> np.ndarray:
    """(P, K) similarity matrix for unit-norm rows ``x`` of shape (P, N)."""
    x = np.atleast_2d(x)
    k = dictionary.size
    out = np.empty((x.shape[0], k))
    if mode == "real":
        dr, di = _parts if _parts is not None else _split_atoms(dictionary)
        xr, xi = np.ascontiguousarray(x.real), np.ascontiguousarray(x.imag)
        for a in range(0, k, atom_block):
            b = min(a + atom_block, k)
            np.matmul(xr, dr[a:b].T, out=out[:, a:b])
            out[:, a:b] += xi @ di[a:b].T
        out *= 2.0
    elif mode == "modulus":
        for a in range(0, k, atom_block):
            b = min(a + atom_block, k)
            out[:, a:b] = 2.0 * np.abs(x @ dictionary.atoms[a:b].conj().T)
    else:
        raise ValueError(f"unknown similarity mode {mode!r}")
    return out


def _check_normalized(x: np.ndarray):
    norms = np.linalg.norm(np.atleast_2d(x), axis=-1)
    if np.any(np.abs(norms - 1.0) > NORM_TOL):
        raise ContractViolationError("measured evolutions must have unit L2 norm")


def similarity_vector(dictionary: FingerprintDictionary, x: SignalEvolution, mode: str = "real",
                      pixel_id: tuple = ()) -> SimilarityProfile:
    samples = x.samples
    if samples.size != dictionary.n_points:
        raise ContractViolationError(
            f"evolution length {samples.size} != dictionary length {dictionary.n_points}")
    _check_normalized(samples)
    return SimilarityProfile(similarities(dictionary, samples[None, :], mode)[0], pixel_id)


def match_pixel(profile: SimilarityProfile, dictionary: FingerprintDictionary) -> MatchResult:
    # np.argmax returns the first maximum: ties go to the lowest index
    k = int(np.argmax(profile.values))
    t1, t2, df = dictionary.params_of(k)
    return MatchResult(k, float(profile.values[k]), TissueParams(float(t1), float(t2), float(df)))


def peak_features(s: np.ndarray, m: int = 4, min_separation: int = 3):
    """Top-``m`` peak values and normalized indices for each row of ``s``.

    A peak is a strict local maximum along the atom index (one-sided test
    at the ends); the global argmax always counts as a peak so that the
    first feature equals the best similarity. Peaks nearer than
    ``min_separation`` to an already selected larger peak are dropped
    (greedy, largest first). Missing peaks are padded with value -2 and
    index -1.
    """
    s = np.atleast_2d(s)
    p, k = s.shape
    is_peak = np.ones((p, k), dtype=bool)
    if k > 1:
        is_peak[:, 1:] &= s[:, 1:] > s[:, :-1]
        is_peak[:, :-1] &= s[:, :-1] > s[:, 1:]
    rows = np.arange(p)
    is_peak[rows, np.argmax(s, axis=1)] = True
    cand = np.where(is_peak, s, -np.inf)

    values = np.full((p, m), PAD_VALUE)
    indices = np.full((p, m), PAD_INDEX)
    positions = np.arange(k)
    scale = 1.0 / (k - 1) if k > 1 else 0.0
    for j in range(m):
        idx = np.argmax(cand, axis=1)
        val = cand[rows, idx]
        ok = np.isfinite(val)
        if not ok.any():
            break
        values[ok, j] = val[ok]
        indices[ok, j] = idx[ok] * scale
        near = np.abs(positions[None, :] - idx[:, None]) < max(min_separation, 1)
        cand[near & ok[:, None]] = -np.inf
    return values, indices


def extract_peaks(profile: SimilarityProfile, m: int = 4, min_separation: int = 3) -> PeakFeatures:
    values, indices = peak_features(profile.values[None, :], m, min_separation)
    return PeakFeatures(values[0], indices[0])


@dataclass
class MatchMaps:
    """Per-pixel matching output for a whole image."""

    best_index: np.ndarray       # int, -1 where not matched
    best_similarity: np.ndarray
    features: np.ndarray         # (H, W, 2m): m peak values then m normalized indices
    t1: np.ndarray
    t2: np.ndarray
    df: np.ndarray

    def param_maps(self) -> dict:
        return {"t1": self.t1, "t2": self.t2, "df": self.df}


def match_series(dictionary: FingerprintDictionary, series: np.ndarray, mode: str = "real",
                 m: int = 4, min_separation: int = 3, pixel_block: int = 256,
                 atom_block: int = 4096):
    """Match many unnormalized evolutions (rows of ``series``).

    Zero rows are left unmatched (index -1, similarity 0, padded features).
    Returns (best_index, best_similarity, features).
    """
    series = np.atleast_2d(series)
    x, norms = _normalize(series)
    valid = norms > 0
    p = series.shape[0]
    best = np.full(p, -1, dtype=np.int64)
    best_s = np.zeros(p)
    feats = np.concatenate([np.full((p, m), PAD_VALUE), np.full((p, m), PAD_INDEX)], axis=1)
    parts = _split_atoms(dictionary) if mode == "real" else None
    idx_valid = np.flatnonzero(valid)
    for a in range(0, idx_valid.size, pixel_block):
        rows = idx_valid[a:a + pixel_block]
        s = similarities(dictionary, x[rows], mode, atom_block, parts)
        k = np.argmax(s, axis=1)
        best[rows] = k
        best_s[rows] = s[np.arange(rows.size), k]
        v, i = peak_features(s, m, min_separation)
        feats[rows, :m] = v
        feats[rows, m:] = i
    return best, best_s, feats


def _normalize(series):
    norms = np.linalg.norm(series, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    return series / safe[:, None], norms


def match_image(dictionary: FingerprintDictionary, frames: np.ndarray, region: np.ndarray,
                **kwargs) -> MatchMaps:
    """Match every pixel of an (N, H, W) image sequence inside ``region``."""
    n, h, w = frames.shape
    flat_region = region.ravel()
    series = frames.reshape(n, -1).T[flat_region]
    best, best_s, feats = match_series(dictionary, series, **kwargs)
    m2 = feats.shape[1]
    best_img = np.full(h * w, -1, dtype=np.int64)
    sim_img = np.zeros(h * w)
    feat_img = np.zeros((h * w, m2))
    best_img[flat_region] = best
    sim_img[flat_region] = best_s
    feat_img[flat_region] = feats
    t1 = np.zeros(h * w)
    t2 = np.zeros(h * w)
    df = np.zeros(h * w)
    ok = best_img >= 0
    t1[ok], t2[ok], df[ok] = dictionary.params_of(best_img[ok])
    shape = (h, w)
    return MatchMaps(best_img.reshape(shape), sim_img.reshape(shape), feat_img.reshape(shape + (m2,)),
                     t1.reshape(shape), t2.reshape(shape), df.reshape(shape))


def benchmark(dictionary: FingerprintDictionary, series: np.ndarray, block_sizes=(256, 1024, 4096),
              repeats: int = 1):
    """Throughput (atoms * pixels * samples / s) of the blocked similarity kernel."""
    x, _ = _normalize(np.atleast_2d(series))
    parts = _split_atoms(dictionary)
    rows = []
    work = dictionary.size * x.shape[0] * dictionary.n_points
    for bs in block_sizes:
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            similarities(dictionary, x, "real", bs, parts)
            best = min(best, time.perf_counter() - t0)
        rows.append({"atom_block": bs, "seconds": best, "throughput": work / best})
    return rows
