"""Cross-model experiment: splits, the train x test detection matrix, the
four deployment strategies and the feature-stability statistics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from tracewatch.classifiers.metrics import EvalMetrics, compute_metrics
from tracewatch.detector import TrainedDetector, fit_detector, trace_labels
from tracewatch.errors import (
    CellError,
    ConfigError,
    InsufficientClassSamples,
    InsufficientModels,
    ModelingError,
)
from tracewatch.features import CATEGORY, FEATURE_NAMES, extract_matrix
from tracewatch.trace import MODEL_IDS, ExecutionTrace, corpus_hash

logger = logging.getLogger(__name__)

TEST_FRACTION = 0.2
MIN_PER_CLASS = 5
STRATEGIES = ("single", "pooled", "voting", "model_aware")
STABLE_CV = 0.2
UNSTABLE_CV = 0.8
CV_MEAN_FLOOR = 1e-9


class ExperimentData:
    """Traces in trace_id order plus their 51 base features (no bigram reference)."""

    def __init__(self, traces: Sequence[ExecutionTrace]) -> None:
        self.traces = sorted(traces, key=lambda t: t.trace_id)
        self.position = {t.trace_id: i for i, t in enumerate(self.traces)}
        if len(self.position) != len(self.traces):
            raise ModelingError("duplicate trace_id in corpus")
        self.base = extract_matrix(self.traces)
        present = {t.model_id for t in self.traces}
        self.models = tuple(m for m in MODEL_IDS if m in present)
        self.hash = corpus_hash(self.traces)

    def select(self, ids: Iterable[str]) -> tuple[list[ExecutionTrace], np.ndarray]:
        rows = [self.position[i] for i in ids]
        return [self.traces[r] for r in rows], self.base[rows]


@dataclass(frozen=True)
class SplitPlan:
    seed: int
    train: dict[str, tuple[str, ...]]
    test: dict[str, tuple[str, ...]]

    @property
    def models(self) -> tuple[str, ...]:
        return tuple(m for m in MODEL_IDS if m in self.train)

    def train_ids(self, models: Iterable[str] | None = None) -> list[str]:
        return [i for m in (models or self.models) for i in self.train[m]]

    def test_ids(self, models: Iterable[str] | None = None) -> list[str]:
        return [i for m in (models or self.models) for i in self.test[m]]


def make_splits(traces: Sequence[ExecutionTrace] | ExperimentData, seed: int = 42) -> SplitPlan:
    """Stratified per-model split: ``floor(0.2 n)`` of each class goes to test.

    Each (model, class) group is sorted by trace_id and permuted with a PCG64
    stream seeded by ``SeedSequence([seed, model_code, class])``.
    """
    if isinstance(traces, ExperimentData):
        traces = traces.traces
    groups: dict[tuple[str, int], list[str]] = {}
    for t in traces:
        groups.setdefault((t.model_id, int(t.is_backdoor)), []).append(t.trace_id)
    models = [m for m in MODEL_IDS if any(k[0] == m for k in groups)]
    train: dict[str, tuple[str, ...]] = {}
    test: dict[str, tuple[str, ...]] = {}
    for m in models:
        tr: list[str] = []
        te: list[str] = []
        for cls in (0, 1):
            ids = sorted(groups.get((m, cls), []))
            if len(ids) < MIN_PER_CLASS:
                raise InsufficientClassSamples(
                    f"{m}: {len(ids)} {'backdoor' if cls else 'benign'} traces, need {MIN_PER_CLASS}"
                )
            ss = np.random.SeedSequence([seed, MODEL_IDS.index(m), cls])
            perm = np.random.Generator(np.random.PCG64(ss)).permutation(len(ids))
            n_test = math.floor(TEST_FRACTION * len(ids))
            te.extend(ids[k] for k in perm[:n_test])
            tr.extend(ids[k] for k in perm[n_test:])
        train[m] = tuple(sorted(tr))
        test[m] = tuple(sorted(te))
    return SplitPlan(seed, train, test)


def _mean(xs: Sequence[float]) -> float | None:
    return sum(xs) / len(xs) if xs else None


@dataclass
class DetectionMatrix:
    models: tuple[str, ...]
    cells: dict[tuple[str, str], EvalMetrics]
    detectors: dict[str, TrainedDetector] = field(default_factory=dict, repr=False)

    def accuracy(self, train_model: str, test_model: str) -> float:
        return self.cells[(train_model, test_model)].accuracy

    @property
    def diagonal_mean(self) -> float:
        return _mean([self.accuracy(m, m) for m in self.models])

    @property
    def off_diagonal_mean(self) -> float | None:
        return _mean([self.accuracy(a, b) for a in self.models for b in self.models if a != b])

    @property
    def overall_mean(self) -> float:
        return _mean([c.accuracy for c in self.cells.values()])

    @property
    def gap(self) -> float | None:
        off = self.off_diagonal_mean
        return None if off is None else self.diagonal_mean - off


def run_matrix(
    data: ExperimentData,
    plan: SplitPlan,
    classifier_kind: str = "forest",
    seed: int | None = None,
) -> DetectionMatrix:
    """Train one detector per model on its train split and score every test split.

    Each detector keeps its own standardizer and benign bigram reference when
    scoring foreign models.
    """
    seed = plan.seed if seed is None else seed
    models = plan.models
    test_sets = {m: data.select(plan.test[m]) for m in models}
    cells: dict[tuple[str, str], EvalMetrics] = {}
    detectors: dict[str, TrainedDetector] = {}
    for a in models:
        train_traces, train_base = data.select(plan.train[a])
        try:
            det = fit_detector(train_traces, classifier_kind, seed, base=train_base)
        except ModelingError as exc:
            raise CellError(a, None, exc) from exc
        detectors[a] = det
        for b in models:
            traces, base = test_sets[b]
            try:
                scores = det.score_traces(traces, base)
                cells[(a, b)] = compute_metrics(scores, trace_labels(traces), det.threshold)
            except ModelingError as exc:
                raise CellError(a, b, exc) from exc
        logger.info("trained on %s: diagonal accuracy %.3f", a, cells[(a, a)].accuracy)
    return DetectionMatrix(models, cells, detectors)


@dataclass(frozen=True)
class StrategyResult:
    strategy: str
    same_model_acc: float
    cross_model_acc: float | None
    overall_acc: float
    gap: float | None
    per_model: dict[str, EvalMetrics]
    pooled: EvalMetrics | None = None


def vote(predictions: np.ndarray) -> np.ndarray:
    """Majority over detector rows (shape detectors x traces); an even split
    is called backdoor."""
    predictions = np.asarray(predictions, dtype=bool)
    return 2 * predictions.sum(axis=0) >= predictions.shape[0]


def _pooled_result(name: str, scores: np.ndarray, pred: np.ndarray, traces, threshold: float,
                   models: Sequence[str]) -> StrategyResult:
    labels = trace_labels(traces)
    overall = compute_metrics(scores, labels, threshold)
    per_model = {}
    for m in models:
        idx = [i for i, t in enumerate(traces) if t.model_id == m]
        per_model[m] = compute_metrics(scores[idx], labels[idx], threshold)
    # every test model was seen in training, so the same- and cross-model
    # views coincide with the pooled accuracy
    acc = float((pred == labels.astype(bool)).mean())
    return StrategyResult(name, acc, acc, acc, 0.0, per_model, overall)


def run_strategy(
    data: ExperimentData,
    plan: SplitPlan,
    strategy: str,
    classifier_kind: str = "forest",
    seed: int | None = None,
    matrix: DetectionMatrix | None = None,
) -> StrategyResult:
    seed = plan.seed if seed is None else seed
    models = plan.models
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")

    if strategy in ("single", "voting") and matrix is None:
        matrix = run_matrix(data, plan, classifier_kind, seed)

    if strategy == "single":
        return StrategyResult(
            "single",
            matrix.diagonal_mean,
            matrix.off_diagonal_mean,
            matrix.overall_mean,
            matrix.gap,
            {m: matrix.cells[(m, m)] for m in models},
        )

    test_traces, test_base = data.select(plan.test_ids())
    if strategy == "voting":
        preds = np.array([
            matrix.detectors[m].predict(test_traces, test_base) for m in models
        ])
        decided = vote(preds)
        # vote share as score; the tie rule puts the cut at exactly one half
        share = preds.mean(axis=0)
        scores = np.where(decided, np.maximum(share, 0.5 + 1e-9), np.minimum(share, 0.5))
        return _pooled_result("voting", scores, decided, test_traces, 0.5, models)

    train_traces, train_base = data.select(plan.train_ids())
    model_aware = strategy == "model_aware"
    try:
        det = fit_detector(train_traces, classifier_kind, seed, model_aware=model_aware,
                           strategy=strategy, base=train_base)
    except ModelingError as exc:
        raise CellError(strategy, None, exc) from exc
    scores = det.score_traces(test_traces, test_base)
    return _pooled_result(strategy, scores, scores > det.threshold, test_traces, det.threshold, models)


# stability


@dataclass(frozen=True)
class StabilityReport:
    models: tuple[str, ...]
    model_means: np.ndarray  # models x features
    cv: tuple[float | None, ...]
    cohens_d: dict[str, tuple[float | None, ...]]

    def cv_of(self, feature: str) -> float | None:
        return self.cv[FEATURE_NAMES.index(feature)]

    def band(self, feature: str) -> str:
        cv = self.cv_of(feature)
        if cv is None:
            return "undefined"
        if cv < STABLE_CV:
            return "stable"
        if cv >= UNSTABLE_CV:
            return "unstable"
        return "moderate"

    def rollup(self) -> dict[str, dict[str, int]]:
        out: dict[str, dict[str, int]] = {}
        for name in FEATURE_NAMES:
            cat = out.setdefault(
                CATEGORY[name], {"total": 0, "stable": 0, "moderate": 0, "unstable": 0, "undefined": 0}
            )
            cat["total"] += 1
            cat[self.band(name)] += 1
        return out

    def top_discriminative(self, model_id: str) -> tuple[str, float] | None:
        ds = self.cohens_d[model_id]
        best = None
        for name, d in zip(FEATURE_NAMES, ds):
            if d is not None and (best is None or abs(d) > abs(best[1])):
                best = (name, d)
        return best


def cohens_d(backdoor: np.ndarray, benign: np.ndarray) -> float | None:
    """Mean difference over the equal-weight pooled sample sigma.

    0 when both groups are constant and equal; ``None`` when both are constant
    but differ (unbounded effect).
    """
    mb, mn = float(np.mean(backdoor)), float(np.mean(benign))
    vb = float(np.var(backdoor, ddof=1)) if len(backdoor) > 1 else 0.0
    vn = float(np.var(benign, ddof=1)) if len(benign) > 1 else 0.0
    pooled = math.sqrt((vb + vn) / 2.0)
    if pooled < 1e-12:
        return 0.0 if mb == mn else None
    return (mb - mn) / pooled


def coefficient_of_variation(means: Sequence[float]) -> float | None:
    """Population sigma of ``means`` over the absolute mean of means."""
    means = np.asarray(means, dtype=np.float64)
    mu = float(means.mean())
    if abs(mu) < CV_MEAN_FLOOR:
        return None
    return float(means.std()) / abs(mu)


def feature_stability(data: ExperimentData | Sequence[ExecutionTrace]) -> StabilityReport:
    """Per-model feature means over all traces, their cross-model CV, and
    per-model Cohen's d of backdoor vs benign."""
    if not isinstance(data, ExperimentData):
        data = ExperimentData(data)
    if len(data.models) < 2:
        raise InsufficientModels(f"stability needs >= 2 models, got {len(data.models)}")
    model_of = np.array([t.model_id for t in data.traces])
    labels = trace_labels(data.traces).astype(bool)
    means = np.array([data.base[model_of == m].mean(axis=0) for m in data.models])
    cv = tuple(coefficient_of_variation(means[:, j]) for j in range(means.shape[1]))
    ds = {}
    for m in data.models:
        X = data.base[model_of == m]
        y = labels[model_of == m]
        ds[m] = tuple(cohens_d(X[y, j], X[~y, j]) for j in range(X.shape[1]))
    return StabilityReport(data.models, means, cv, ds)


# full run


@dataclass
class ExperimentResult:
    seed: int
    classifier: str
    corpus_hash: str
    dataset: dict[str, dict[str, int]]
    plan: SplitPlan
    matrix: DetectionMatrix
    strategies: dict[str, StrategyResult]
    stability: StabilityReport | None


def dataset_summary(data: ExperimentData, plan: SplitPlan) -> dict[str, dict[str, int]]:
    out = {}
    for m in data.models:
        ts = [t for t in data.traces if t.model_id == m]
        n_bd = sum(t.is_backdoor for t in ts)
        out[m] = {
            "benign": len(ts) - n_bd,
            "backdoor": n_bd,
            "tm1": sum(t.metadata.threat_model == "TM1" for t in ts),
            "tm2": sum(t.metadata.threat_model == "TM2" for t in ts),
            "total": len(ts),
            "train": len(plan.train[m]),
            "test": len(plan.test[m]),
        }
    return out


def run_experiment(
    traces: Sequence[ExecutionTrace] | ExperimentData,
    seed: int = 42,
    classifier_kind: str = "forest",
    strategies: Sequence[str] = STRATEGIES,
) -> ExperimentResult:
    data = traces if isinstance(traces, ExperimentData) else ExperimentData(traces)
    plan = make_splits(data, seed)
    matrix = run_matrix(data, plan, classifier_kind, seed)
    results = {
        s: run_strategy(data, plan, s, classifier_kind, seed, matrix)
        for s in STRATEGIES
        if s in strategies
    }
    stability = feature_stability(data) if len(data.models) >= 2 else None
    return ExperimentResult(
        seed=seed,
        classifier=classifier_kind,
        corpus_hash=data.hash,
        dataset=dataset_summary(data, plan),
        plan=plan,
        matrix=matrix,
        strategies=results,
        stability=stability,
    )
