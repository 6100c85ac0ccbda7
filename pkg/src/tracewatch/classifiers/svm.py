"""Linear SVM trained by deterministic full-batch subgradient descent.

Minimizes ``lam/2 * |w|^2 + mean_i c_i * max(0, 1 - y_i (w.x_i + b))`` with
``lam = 1 / (C * n)``, which has the same minimizer as the usual
``1/2 |w|^2 + C * sum_i c_i * hinge_i``. Steps follow the Pegasos schedule
``eta_t = 1 / (lam * t)`` with projection onto the ball of radius
``1 / sqrt(lam)``; the bias is unregularized and rides along in the same
update. The iterate with the lowest objective seen is returned.
"""

from __future__ import annotations

import numpy as np

from tracewatch.classifiers.forest import balanced_class_weights, check_training_data
from tracewatch.errors import DegenerateLabels, DimensionMismatch

C_DEFAULT = 1.0
MAX_ITER = 2000
# stop once the best objective has not improved by this relative amount
# over the last PATIENCE iterations
TOL = 1e-7
PATIENCE = 200


class SvmModel:
    """Linear decision function; score is the signed margin, label is
    backdoor only when the margin is strictly positive."""

    kind = "svm"
    threshold = 0.0

    def __init__(self, weights: np.ndarray, bias: float, seed: int, C: float = C_DEFAULT,
                 class_weights: np.ndarray | None = None, n_iter: int = 0) -> None:
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = float(bias)
        self.seed = seed
        self.C = C
        self.class_weights = np.asarray(class_weights if class_weights is not None else [1.0, 1.0])
        self.n_iter = n_iter

    @property
    def n_features(self) -> int:
        return int(self.weights.shape[0])

    def decision_scores(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.n_features:
            raise DimensionMismatch(f"SVM trained on {self.n_features} features, got {X.shape[-1]}")
        return X @ self.weights + self.bias

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "seed": self.seed,
            "C": self.C,
            "class_weights": self.class_weights.tolist(),
            "n_iter": self.n_iter,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SvmModel":
        return cls(np.asarray(d["weights"]), d["bias"], int(d["seed"]), float(d["C"]),
                   np.asarray(d["class_weights"]), int(d["n_iter"]))


def _objective(X, ys, c, w, b, lam):
    hinge = np.maximum(0.0, 1.0 - ys * (X @ w + b))
    return 0.5 * lam * float(w @ w) + float((c * hinge).mean())


def train_svm(X: np.ndarray, y: np.ndarray, seed: int = 42, C: float = C_DEFAULT,
              max_iter: int = MAX_ITER) -> SvmModel:
    """Fit a class-balanced linear SVM. Features should already be standardized.

    The solver is full-batch and draws no random numbers; ``seed`` is kept as
    provenance so every classifier records the same training metadata.
    """
    X, y = check_training_data(X, y)
    cw = balanced_class_weights(y)
    if min(int(y.sum()), len(y) - int(y.sum())) < 2:
        raise DegenerateLabels("need at least 2 samples of each class")
    n, d = X.shape
    ys = np.where(y == 1, 1.0, -1.0)
    c = cw[y]
    lam = 1.0 / (C * n)
    radius = 1.0 / np.sqrt(lam)

    w = np.zeros(d)
    b = 0.0
    best = (_objective(X, ys, c, w, b, lam), w.copy(), b, 0)
    last_gain_at = 0
    for t in range(1, max_iter + 1):
        viol = ys * (X @ w + b) < 1.0
        coef = c[viol] * ys[viol]
        eta = 1.0 / (lam * t)
        w = (1.0 - eta * lam) * w + (eta / n) * (coef @ X[viol])
        b = b + (eta / n) * coef.sum()
        norm = np.sqrt(w @ w + b * b)
        if norm > radius:
            w *= radius / norm
            b *= radius / norm
        obj = _objective(X, ys, c, w, b, lam)
        if obj < best[0] - TOL * max(1.0, abs(best[0])):
            last_gain_at = t
        if obj < best[0]:
            best = (obj, w.copy(), b, t)
        if t - last_gain_at >= PATIENCE:
            break
    _, w, b, _ = best
    return SvmModel(w, b, seed, C, cw, n_iter=t)
