"""Classification metrics with backdoor as the positive class."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from tracewatch.errors import DimensionMismatch, SingleClassAuc


@dataclass(frozen=True)
class EvalMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc_roc: float | None  # None when only one class is present
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return asdict(self)


def _ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks, tied values sharing their average rank."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], len(xs)]
    avg = (starts + ends + 1) / 2.0  # mean of ranks start+1 .. end
    ranks = np.empty(len(x))
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def auc_roc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Area under the ROC curve via the Mann-Whitney U statistic; a tied
    (positive, negative) pair counts as half a correct ordering."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape:
        raise DimensionMismatch(f"{s.shape[0]} scores vs {y.shape[0]} labels")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassAuc("AUC needs at least one sample of each class")
    r = _ranks(s)
    u = r[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def confusion(predicted: Sequence[bool], labels: Sequence[int]) -> tuple[int, int, int, int]:
    p = np.asarray(predicted).astype(bool)
    y = np.asarray(labels).astype(bool)
    tp = int((p & y).sum())
    fp = int((p & ~y).sum())
    tn = int((~p & ~y).sum())
    fn = int((~p & y).sum())
    return tp, fp, tn, fn


def metrics_from_counts(tp: int, fp: int, tn: int, fn: int, auc: float | None = None) -> EvalMetrics:
    total = tp + fp + tn + fn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return EvalMetrics(
        accuracy=(tp + tn) / total if total else 0.0,
        precision=precision,
        recall=recall,
        f1=f1,
        auc_roc=auc,
        tp=tp, fp=fp, tn=tn, fn=fn,
    )


def compute_metrics(scores: Sequence[float], labels: Sequence[int], threshold: float = 0.5) -> EvalMetrics:
    """Metrics for ``score > threshold`` predictions (a score exactly at the
    threshold counts as benign)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    if s.shape != y.shape:
        raise DimensionMismatch(f"{s.shape[0]} scores vs {y.shape[0]} labels")
    try:
        auc = auc_roc(s, y)
    except SingleClassAuc:
        auc = None
    return metrics_from_counts(*confusion(s > threshold, y), auc=auc)
