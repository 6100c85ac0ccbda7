"""Classifiers, metrics and model persistence."""

from __future__ import annotations

import numpy as np

from tracewatch.classifiers.forest import ForestModel, train_forest
from tracewatch.classifiers.metrics import EvalMetrics, auc_roc, compute_metrics
from tracewatch.classifiers.persist import load_model, save_model
from tracewatch.classifiers.svm import SvmModel, train_svm
from tracewatch.errors import ConfigError

CLASSIFIERS = {"forest": train_forest, "svm": train_svm}


def train_classifier(kind: str, X: np.ndarray, y: np.ndarray, seed: int):
    try:
        trainer = CLASSIFIERS[kind]
    except KeyError:
        raise ConfigError(f"unknown classifier kind {kind!r}; choose from {sorted(CLASSIFIERS)}") from None
    return trainer(X, y, seed)


def predict_score(model, v: np.ndarray) -> tuple[float, bool]:
    """Score one feature vector; returns ``(score, is_backdoor)``."""
    score = float(model.decision_scores(np.asarray(v, dtype=np.float64).reshape(1, -1))[0])
    return score, score > model.threshold


__all__ = [
    "CLASSIFIERS",
    "EvalMetrics",
    "ForestModel",
    "SvmModel",
    "auc_roc",
    "compute_metrics",
    "load_model",
    "predict_score",
    "save_model",
    "train_classifier",
    "train_forest",
    "train_svm",
]
