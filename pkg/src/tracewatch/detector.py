"""A trained detector: feature extraction settings, standardizer and classifier."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from tracewatch.classifiers import train_classifier
from tracewatch.classifiers.persist import load_model, model_from_json, model_to_json, save_model
from tracewatch.errors import DimensionMismatch, MalformedModel
from tracewatch.features import (
    N_BASE,
    Standardizer,
    extract_features,
    extract_matrix,
    feature_names,
    fit_standardizer,
    reference_bigrams,
    with_anomaly_scores,
)
from tracewatch.trace import MODEL_IDS, ExecutionTrace


def trace_labels(traces: Sequence[ExecutionTrace]) -> np.ndarray:
    return np.array([int(t.is_backdoor) for t in traces], dtype=np.int64)


@dataclass
class TrainedDetector:
    classifier: object
    standardizer: Standardizer
    reference: frozenset[tuple[str, str]]
    model_aware: bool
    source_models: tuple[str, ...]
    seed: int
    strategy: str = "single"

    @property
    def kind(self) -> str:
        return self.classifier.kind

    @property
    def threshold(self) -> float:
        return self.classifier.threshold

    @property
    def feature_names(self) -> tuple[str, ...]:
        return feature_names(self.model_aware)

    def raw_features(self, traces: Sequence[ExecutionTrace], base: np.ndarray | None = None) -> np.ndarray:
        """Unscaled feature matrix for ``traces`` under this detector's reference.

        ``base`` may hold precomputed 51-wide features (any reference); only
        the reference-dependent column is recomputed then.
        """
        if base is None:
            X = extract_matrix(traces, self.reference)
        else:
            X = with_anomaly_scores(base[:, :N_BASE], traces, self.reference)
        if self.model_aware:
            codes = np.array([[MODEL_IDS.index(t.model_id)] for t in traces], dtype=np.float64)
            X = np.hstack([X, codes])
        return X

    def score_matrix(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        width = N_BASE + int(self.model_aware)
        if X.shape[-1] != width:
            raise DimensionMismatch(f"detector expects {width} features, got {X.shape[-1]}")
        return self.classifier.decision_scores(self.standardizer.transform(X))

    def score_traces(self, traces: Sequence[ExecutionTrace], base: np.ndarray | None = None) -> np.ndarray:
        return self.score_matrix(self.raw_features(traces, base))

    def score_trace(self, trace: ExecutionTrace) -> tuple[float, bool]:
        v = extract_features(trace, self.reference)
        if self.model_aware:
            v = np.append(v, float(MODEL_IDS.index(trace.model_id)))
        score = float(self.score_matrix(v.reshape(1, -1))[0])
        return score, score > self.threshold

    def predict(self, traces: Sequence[ExecutionTrace], base: np.ndarray | None = None) -> np.ndarray:
        return self.score_traces(traces, base) > self.threshold

    # persistence

    def _extra(self) -> dict:
        return {
            "standardizer": self.standardizer.to_dict(),
            "reference_bigrams": sorted([a, b] for a, b in self.reference),
            "model_aware": self.model_aware,
            "source_models": list(self.source_models),
            "seed": self.seed,
            "strategy": self.strategy,
        }

    def to_json(self) -> str:
        return model_to_json(self.classifier, self.feature_names, self._extra())

    def save(self, path: str | Path) -> None:
        save_model(self.classifier, path, self.feature_names, self._extra())

    @classmethod
    def _from_parts(cls, model, names, extra) -> "TrainedDetector":
        try:
            det = cls(
                classifier=model,
                standardizer=Standardizer.from_dict(extra["standardizer"]),
                reference=frozenset((a, b) for a, b in extra["reference_bigrams"]),
                model_aware=bool(extra["model_aware"]),
                source_models=tuple(extra["source_models"]),
                seed=int(extra["seed"]),
                strategy=str(extra["strategy"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedModel(f"model file lacks detector metadata: {exc}") from exc
        if len(names) != len(det.feature_names):
            raise DimensionMismatch(
                f"model file has {len(names)} features, detector layout needs {len(det.feature_names)}"
            )
        if tuple(names) != det.feature_names:
            raise MalformedModel("stored feature names do not match the detector layout")
        return det

    @classmethod
    def from_json(cls, text: str) -> "TrainedDetector":
        return cls._from_parts(*model_from_json(text))

    @classmethod
    def load(cls, path: str | Path) -> "TrainedDetector":
        return cls._from_parts(*load_model(path))


def fit_detector(
    traces: Sequence[ExecutionTrace],
    kind: str = "forest",
    seed: int = 42,
    model_aware: bool = False,
    strategy: str = "single",
    base: np.ndarray | None = None,
) -> TrainedDetector:
    """Fit standardizer and classifier on ``traces``.

    The benign bigram reference comes from the benign traces among
    ``traces``; features are z-scored with the fitted standardizer (the model
    code column is left as is) before the classifier sees them.
    """
    reference = reference_bigrams(t for t in traces if not t.is_backdoor)
    det = TrainedDetector(
        classifier=None,
        standardizer=None,  # type: ignore[arg-type]
        reference=reference,
        model_aware=model_aware,
        source_models=tuple(sorted({t.model_id for t in traces}, key=MODEL_IDS.index)),
        seed=seed,
        strategy=strategy,
    )
    X = det.raw_features(traces, base)
    y = trace_labels(traces)
    det.standardizer = fit_standardizer(X, n_scaled=N_BASE)
    det.classifier = train_classifier(kind, det.standardizer.transform(X), y, seed)
    return det
