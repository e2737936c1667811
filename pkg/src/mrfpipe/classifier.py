"""Mismatch prediction with binary decision trees grown by information gain.

Labels: 0 = correctly matched, 1 = mismatched. Features are the 8 peak
features from the matcher (4 peak values, then 4 normalized indices).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dictionary import ParameterGrid, local_step
from .errors import DegenerateTrainingError, FormatError, InvalidArgumentError

CORRECT, MISMATCHED = 0, 1
N_FEATURES = 8
FEATURE_SETS = {1: (0,), 4: (0, 1, 2, 3), 8: tuple(range(8))}
FORMAT_HEADER = "# mrfpipe decision tree v1"


def train_labels(estimated: dict, truth: dict, grid: ParameterGrid, region=None,
                 tolerance_steps: float = 1.0) -> dict:
    """Per-parameter mismatch images: |estimate - truth| > tolerance.

    The tolerance is ``tolerance_steps`` times the local grid spacing at
    the true value. Pixels outside ``region`` are labeled correct.
    """
    out = {}
    for name in ("t1", "t2", "df"):
        est = np.asarray(estimated[name], dtype=np.float64)
        tru = np.asarray(truth[name], dtype=np.float64)
        if est.shape != tru.shape:
            raise InvalidArgumentError("estimated and true maps disagree in shape")
        tol = tolerance_steps * local_step(grid.axis(name), tru)
        lab = np.abs(est - tru) > tol * (1 + 1e-9)
        if region is not None:
            lab &= region
        out[name] = lab
    return out


def entropy(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts[counts > 0] / n
    return float(-(p * np.log2(p)).sum())


def _entropy_rows(c0, c1):
    n = c0 + c1
    with np.errstate(divide="ignore", invalid="ignore"):
        h = np.zeros_like(n, dtype=np.float64)
        for c in (c0, c1):
            p = np.where(n > 0, c / np.where(n > 0, n, 1), 0.0)
            h -= np.where(p > 0, p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
    return h


@dataclass
class Node:
    counts: tuple            # (n_correct, n_mismatched)
    depth: int
    feature: int = -1
    threshold: float = 0.0
    left: int = -1
    right: int = -1
    gain: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0

    @property
    def label(self) -> int:
        c0, c1 = self.counts
        return CORRECT if c0 > c1 else MISMATCHED


@dataclass
class DecisionTree:
    nodes: list
    features: tuple = FEATURE_SETS[8]
    max_depth: int | None = None
    min_leaf: int = 1

    @property
    def depth(self) -> int:
        return max(n.depth for n in self.nodes)

    def predict(self, features) -> int:
        x = np.asarray(features, dtype=np.float64)
        if x.shape != (N_FEATURES,):
            raise InvalidArgumentError(f"expected {N_FEATURES} features, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise InvalidArgumentError("features must be finite")
        node = self.nodes[0]
        while not node.is_leaf:
            node = self.nodes[node.left if x[node.feature] <= node.threshold else node.right]
        return node.label

    def predict_batch(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != N_FEATURES:
            raise InvalidArgumentError(f"expected {N_FEATURES} features per row")
        if not np.all(np.isfinite(x)):
            raise InvalidArgumentError("features must be finite")
        at = np.zeros(x.shape[0], dtype=np.int64)
        feat = np.array([n.feature for n in self.nodes])
        thr = np.array([n.threshold for n in self.nodes])
        left = np.array([n.left for n in self.nodes])
        right = np.array([n.right for n in self.nodes])
        label = np.array([n.label for n in self.nodes])
        while True:
            inner = feat[at] >= 0
            if not inner.any():
                break
            rows = np.flatnonzero(inner)
            f = feat[at[rows]]
            go_left = x[rows, f] <= thr[at[rows]]
            at[rows] = np.where(go_left, left[at[rows]], right[at[rows]])
        return label[at]

    # ---- text format: one node per line
    def dumps(self) -> str:
        lines = [FORMAT_HEADER,
                 "features " + " ".join(str(f) for f in self.features),
                 f"limits {self.max_depth if self.max_depth is not None else 'none'} {self.min_leaf}"]
        for i, n in enumerate(self.nodes):
            if n.is_leaf:
                lines.append(f"{i} leaf depth={n.depth} counts={n.counts[0]},{n.counts[1]} label={n.label}")
            else:
                lines.append(f"{i} split depth={n.depth} feature={n.feature} threshold={n.threshold!r} "
                             f"left={n.left} right={n.right} counts={n.counts[0]},{n.counts[1]} "
                             f"gain={n.gain!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "DecisionTree":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0] != FORMAT_HEADER:
            raise FormatError(f"expected header {FORMAT_HEADER!r}")
        try:
            features = tuple(int(v) for v in lines[1].split()[1:])
            _, depth, min_leaf = lines[2].split()
            nodes = []
            for i, ln in enumerate(lines[3:]):
                parts = ln.split()
                if int(parts[0]) != i:
                    raise FormatError(f"node ids out of order at line {i + 4}")
                kv = dict(p.split("=", 1) for p in parts[2:])
                c0, c1 = (int(v) for v in kv["counts"].split(","))
                node = Node((c0, c1), int(kv["depth"]))
                if parts[1] == "split":
                    node.feature = int(kv["feature"])
                    node.threshold = float(kv["threshold"])
                    node.left, node.right = int(kv["left"]), int(kv["right"])
                    node.gain = float(kv["gain"])
                nodes.append(node)
        except (IndexError, KeyError, ValueError) as exc:
            raise FormatError(f"malformed tree file: {exc}") from exc
        return cls(nodes, features, None if depth == "none" else int(depth), int(min_leaf))

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "DecisionTree":
        with open(path) as fh:
            return cls.loads(fh.read())


def best_split(x: np.ndarray, y: np.ndarray, features, min_leaf: int = 1):
    """Highest-gain (feature, threshold, gain) over midpoint thresholds.

    Ties go to the lowest feature index, then the smallest threshold.
    Returns None when no split leaves ``min_leaf`` samples on both sides.
    """
    n = y.size
    total1 = int(y.sum())
    parent = entropy([n - total1, total1])
    best = None
    for f in features:
        order = np.argsort(x[:, f], kind="stable")
        v = x[order, f]
        c1 = np.cumsum(y[order])
        # split after position i (left = first i+1 samples) where values change
        pos = np.flatnonzero(v[1:] > v[:-1])
        if pos.size == 0:
            continue
        nl = pos + 1
        nr = n - nl
        ok = (nl >= min_leaf) & (nr >= min_leaf)
        if not ok.any():
            continue
        pos, nl, nr = pos[ok], nl[ok], nr[ok]
        l1 = c1[pos]
        r1 = total1 - l1
        h = (nl * _entropy_rows(nl - l1, l1) + nr * _entropy_rows(nr - r1, r1)) / n
        gains = parent - h
        j = int(np.argmax(gains))
        g = float(gains[j])
        if best is None or g > best[2]:
            lo, hi = v[pos[j]], v[pos[j] + 1]
            t = 0.5 * (lo + hi)
            if not lo <= t < hi:
                t = lo
            best = (int(f), float(t), g)
    return best


def train_tree(x, y, max_depth: int | None = 12, min_leaf: int = 5,
               features=FEATURE_SETS[8]) -> DecisionTree:
    """Grow a tree top-down on (n, 8) features ``x`` and 0/1 labels ``y``.

    Only columns in ``features`` are considered for splits. Nodes stop
    splitting when pure, at ``max_depth``, or when no split keeps
    ``min_leaf`` samples per side. Leaf label is the majority class with
    ties going to mismatched.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    if x.ndim != 2 or x.shape[1] != N_FEATURES or x.shape[0] != y.size:
        raise InvalidArgumentError(f"expected (n, {N_FEATURES}) features with n labels")
    if y.size == 0 or y.min() == y.max():
        raise DegenerateTrainingError("training needs samples of both classes")
    features = tuple(sorted(features))
    nodes = []
    stack = [(np.arange(y.size), 0, None)]  # (sample ids, depth, (parent id, side))
    while stack:
        ids, depth, parent = stack.pop()
        yy = y[ids]
        n1 = int(yy.sum())
        node = Node((int(yy.size - n1), n1), depth)
        nid = len(nodes)
        nodes.append(node)
        if parent is not None:
            pid, side = parent
            setattr(nodes[pid], side, nid)
        pure = n1 == 0 or n1 == yy.size
        if pure or (max_depth is not None and depth >= max_depth) or yy.size < 2 * min_leaf:
            continue
        split = best_split(x[ids], yy, features, min_leaf)
        if split is None:
            continue
        node.feature, node.threshold, node.gain = split
        go_left = x[ids, node.feature] <= node.threshold
        # right pushed first so the left subtree gets the next ids (preorder)
        stack.append((ids[~go_left], depth + 1, (nid, "right")))
        stack.append((ids[go_left], depth + 1, (nid, "left")))
    return DecisionTree(nodes, features, max_depth, min_leaf)


def accuracy(tree: DecisionTree, x, y) -> float:
    return float(np.mean(tree.predict_batch(x) == np.asarray(y)))


@dataclass
class TreeSet:
    """One tree per parameter, all using the same feature subset."""

    trees: dict = field(default_factory=dict)
    n_features: int = 8

    def predict_maps(self, features_img: np.ndarray, region: np.ndarray) -> dict:
        h, w, _ = features_img.shape
        out = {}
        x = features_img[region]
        for name, tree in self.trees.items():
            m = np.zeros((h, w), dtype=bool)
            m[region] = tree.predict_batch(x) == MISMATCHED
            out[name] = m
        return out


def train_tree_set(features_img: np.ndarray, labels: dict, region: np.ndarray, n_features: int = 8,
                   max_depth: int | None = 12, min_leaf: int = 5) -> TreeSet:
    x = features_img[region]
    trees = {}
    for name, lab in labels.items():
        trees[name] = train_tree(x, lab[region], max_depth, min_leaf, FEATURE_SETS[n_features])
    return TreeSet(trees, n_features)
