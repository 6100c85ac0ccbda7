"""Random forest of Gini decision trees.

Random streams: ``SeedSequence(seed).spawn(n_trees)`` gives one PCG64 stream
per tree. A tree first draws its bootstrap sample (``integers(0, n, n)``),
then, growing depth-first with the left child before the right, draws one
feature permutation per node. Split candidates are taken from that
permutation until ``max_features`` non-constant features have been scored.
Rows are consumed in the order given, so callers that want row-order
independence pass canonically ordered data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from tracewatch.errors import DegenerateLabels, DimensionMismatch, NonFiniteInput

N_TREES = 100
MAX_DEPTH = 10
# relative slack under which two split impurities count as equal
_TIE_TOL = 1e-12


def balanced_class_weights(y: np.ndarray) -> np.ndarray:
    """``n / (2 * n_class)`` for classes 0 and 1."""
    n = len(y)
    n1 = int(y.sum())
    n0 = n - n1
    if n0 == 0 or n1 == 0:
        raise DegenerateLabels("training labels contain a single class")
    return np.array([n / (2.0 * n0), n / (2.0 * n1)])


def check_training_data(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"X {X.shape} and y {y.shape} do not line up")
    if not np.isfinite(X).all():
        raise NonFiniteInput("training matrix contains NaN or infinity")
    if not np.isin(y, (0, 1)).all():
        raise DegenerateLabels("labels must be 0 (benign) or 1 (backdoor)")
    return X, y


def _best_split(xs_sorted: np.ndarray, w0: np.ndarray, w1: np.ndarray, total: float):
    """Lowest weighted child Gini over midpoints of a sorted column.

    Returns ``(impurity, position)`` with position the last row going left,
    or ``None`` when the column is constant.
    """
    valid = xs_sorted[:-1] < xs_sorted[1:]
    if not valid.any():
        return None
    c0 = np.cumsum(w0)[:-1]
    c1 = np.cumsum(w1)[:-1]
    t0, t1 = w0.sum(), w1.sum()
    wl = c0 + c1
    wr = total - wl
    with np.errstate(divide="ignore", invalid="ignore"):
        gl = wl - (c0 * c0 + c1 * c1) / wl
        gr = wr - ((t0 - c0) ** 2 + (t1 - c1) ** 2) / wr
    imp = np.where(valid & (wl > 0) & (wr > 0), (gl + gr) / total, np.inf)
    pos = int(np.argmin(imp))
    if not math.isfinite(imp[pos]):
        return None
    return float(imp[pos]), pos


class _TreeBuilder:
    def __init__(self, X, y, w, rng, max_depth, max_features):
        self.X, self.y, self.w = X, y, w
        self.rng = rng
        self.max_depth = max_depth
        self.max_features = max_features
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []
        self.depth = 0

    def _leaf(self, node: int, w0: float, w1: float) -> None:
        self.value[node] = w1 / (w0 + w1) if (w0 + w1) > 0 else 0.0

    def _new_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feature) - 1

    def build(self, idx: np.ndarray, depth: int = 0) -> int:
        node = self._new_node()
        self.depth = max(self.depth, depth)
        y, w = self.y[idx], self.w[idx]
        w1 = float(w[y == 1].sum())
        w0 = float(w[y == 0].sum())
        self._leaf(node, w0, w1)
        if depth >= self.max_depth or len(idx) < 2 or w0 == 0.0 or w1 == 0.0:
            return node

        total = w0 + w1
        best = None  # (impurity, feature, threshold)
        scored = 0
        candidates = []
        for f in self.rng.permutation(self.X.shape[1]):
            if scored >= self.max_features:
                break
            col = self.X[idx, f]
            if col.min() == col.max():
                continue
            scored += 1
            candidates.append(int(f))
        for f in sorted(candidates):
            col = self.X[idx, f]
            order = np.argsort(col, kind="stable")
            xs = col[order]
            ws = w[order]
            ys = y[order]
            res = _best_split(xs, ws * (ys == 0), ws * (ys == 1), total)
            if res is None:
                continue
            imp, pos = res
            if best is None or imp < best[0] - _TIE_TOL * max(1.0, abs(best[0])):
                thr = 0.5 * (xs[pos] + xs[pos + 1])
                if thr >= xs[pos + 1]:
                    thr = float(xs[pos])
                best = (imp, f, float(thr))
        if best is None:
            return node

        _, f, thr = best
        go_left = self.X[idx, f] <= thr
        self.feature[node] = f
        self.threshold[node] = thr
        left = self.build(idx[go_left], depth + 1)
        right = self.build(idx[~go_left], depth + 1)
        self.left[node] = left
        self.right[node] = right
        return node


@dataclass
class Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # weighted backdoor share at each node

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    def depth(self) -> int:
        deepest = 0
        stack = [(0, 0)]
        while stack:
            node, d = stack.pop()
            deepest = max(deepest, d)
            if self.feature[node] >= 0:
                stack.append((int(self.left[node]), d + 1))
                stack.append((int(self.right[node]), d + 1))
        return deepest

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=np.float64),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=np.float64),
        )


def grow_tree(X, y, w, rng, max_depth=MAX_DEPTH, max_features=None) -> Tree:
    if max_features is None:
        max_features = max(1, int(math.sqrt(X.shape[1])))
    b = _TreeBuilder(X, y, w, rng, max_depth, max_features)
    b.build(np.arange(X.shape[0]))
    return Tree(
        np.asarray(b.feature, dtype=np.int64),
        np.asarray(b.threshold, dtype=np.float64),
        np.asarray(b.left, dtype=np.int64),
        np.asarray(b.right, dtype=np.int64),
        np.asarray(b.value, dtype=np.float64),
    )


class ForestModel:
    """Fitted forest. Score = fraction of trees voting backdoor; label is
    backdoor only when the score is strictly above 0.5."""

    kind = "forest"
    threshold = 0.5

    def __init__(self, trees: list[Tree], n_features: int, seed: int,
                 class_weights: np.ndarray, max_depth: int = MAX_DEPTH) -> None:
        self.trees = trees
        self.n_features = n_features
        self.seed = seed
        self.class_weights = np.asarray(class_weights, dtype=np.float64)
        self.max_depth = max_depth
        self._pack()

    def _pack(self) -> None:
        # All trees in one node table; leaves point at themselves with an
        # infinite threshold so a fixed number of descent steps lands on them.
        offsets = np.cumsum([0] + [t.n_nodes for t in self.trees])
        feat, thr, left, right, vote = [], [], [], [], []
        for off, t in zip(offsets, self.trees):
            leaf = t.feature < 0
            ids = np.arange(t.n_nodes) + off
            feat.append(np.where(leaf, 0, t.feature))
            thr.append(np.where(leaf, np.inf, t.threshold))
            left.append(np.where(leaf, ids, t.left + off))
            right.append(np.where(leaf, ids, t.right + off))
            vote.append(t.value > 0.5)
        self._roots = offsets[:-1].astype(np.int64)
        self._feat = np.concatenate(feat)
        self._thr = np.concatenate(thr)
        self._left = np.concatenate(left)
        self._right = np.concatenate(right)
        self._vote = np.concatenate(vote)
        self._steps = max((t.depth() for t in self.trees), default=0)

    def decision_scores(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X2 = X.reshape(1, -1) if single else X
        if X2.shape[1] != self.n_features:
            raise DimensionMismatch(
                f"forest trained on {self.n_features} features, got {X2.shape[1]}"
            )
        rows = np.arange(X2.shape[0])[:, None]
        node = np.broadcast_to(self._roots, (X2.shape[0], len(self._roots)))
        for _ in range(self._steps):
            go_left = X2[rows, self._feat[node]] <= self._thr[node]
            node = np.where(go_left, self._left[node], self._right[node])
        scores = self._vote[node].mean(axis=1)
        return scores[0:1].reshape(()) if single else scores

    def to_dict(self) -> dict:
        return {
            "n_features": self.n_features,
            "seed": self.seed,
            "max_depth": self.max_depth,
            "class_weights": self.class_weights.tolist(),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        return cls(
            [Tree.from_dict(t) for t in d["trees"]],
            int(d["n_features"]),
            int(d["seed"]),
            np.asarray(d["class_weights"]),
            int(d["max_depth"]),
        )


def train_forest(
    X: np.ndarray,
    y: np.ndarray,
    seed: int,
    n_trees: int = N_TREES,
    max_depth: int = MAX_DEPTH,
    max_features: int | None = None,
) -> ForestModel:
    """Fit a class-balanced bootstrap forest of Gini trees (labels: 1 = backdoor)."""
    X, y = check_training_data(X, y)
    cw = balanced_class_weights(y)
    if min(int(y.sum()), len(y) - int(y.sum())) < 2:
        raise DegenerateLabels("need at least 2 samples of each class")
    base_w = cw[y]
    n = X.shape[0]
    trees = []
    for child in np.random.SeedSequence(seed).spawn(n_trees):
        rng = np.random.Generator(np.random.PCG64(child))
        boot = rng.integers(0, n, n)
        counts = np.bincount(boot, minlength=n)
        keep = np.flatnonzero(counts)
        trees.append(
            grow_tree(X[keep], y[keep], base_w[keep] * counts[keep], rng, max_depth, max_features)
        )
    return ForestModel(trees, X.shape[1], seed, cw, max_depth)
