"""Behavioral feature extraction, z-score standardization and model codes.

The 51 base features come in a frozen order, grouped as temporal (10),
sequence (15), action (12) and data-flow (14). ``FEATURE_DICTIONARY`` holds
the one-line definition of each; README.md carries the same table.

Conventions used throughout:

* standard deviations are population (divide by n);
* entropies use the natural log and ignore empty bins;
* histograms use 10 equal-width bins over the observed range, and a
  single-valued sample has entropy 0;
* ratios with an empty denominator are 0.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from tracewatch.errors import DimensionMismatch, InsufficientData, UnknownModelId
from tracewatch.trace import MODEL_IDS, ExecutionTrace

HIST_BINS = 10
BURST_WINDOW = 3
BURST_FACTOR = 0.25
RARE_TOOL_SHARE = 0.05
LOOP_MIN_INTERVENING = 2
# Floors for time denominators (seconds); keep rates finite on degenerate traces.
MIN_DURATION = 1e-6
MIN_BURST_DELAY = 1e-3
SIGMA_FLOOR = 1e-12

DATA_TOOLS = ("file_read", "web_fetch", "database_query")

TEMPORAL = (
    "avg_duration",
    "max_duration",
    "std_duration",
    "avg_delay",
    "max_delay",
    "total_duration",
    "execution_rate",
    "timing_entropy",
    "has_burst",
    "burst_intensity",
)
SEQUENCE = (
    "unique_bigrams",
    "max_bigram_freq",
    "bigram_diversity",
    "unique_trigrams",
    "trigram_diversity",
    "repetition_ratio",
    "max_consecutive_repeats",
    "sequence_length",
    "unique_transitions",
    "transition_entropy",
    "has_loops",
    "loop_count",
    "dependency_ratio",
    "total_dependencies",
    "rare_tool_ratio",
)
ACTION = (
    "tool_count",
    "unique_tools",
    "tool_diversity",
    "most_common_tool_freq",
    "tool_transition_entropy",
    "file_read_count",
    "web_fetch_count",
    "tool_switching_rate",
    "unauthorized_tool_access",
    "tool_sequence_anomaly_score",
    "avg_params_length",
    "max_params_length",
)
DATA_FLOW = (
    "avg_input_size",
    "max_input_size",
    "std_input_size",
    "avg_output_size",
    "max_output_size",
    "std_output_size",
    "avg_io_ratio",
    "max_io_ratio",
    "input_diversity",
    "output_diversity",
    "io_entropy",
    "io_coupling",
    "sensitive_data_mentions",
    "data_flow_complexity",
)

FEATURE_NAMES: tuple[str, ...] = TEMPORAL + SEQUENCE + ACTION + DATA_FLOW
MODEL_CODE_NAME = "model_code"
N_BASE = len(FEATURE_NAMES)
FEATURE_INDEX = {name: i for i, name in enumerate(FEATURE_NAMES)}
CATEGORY: dict[str, str] = {
    **{n: "temporal" for n in TEMPORAL},
    **{n: "sequence" for n in SEQUENCE},
    **{n: "action" for n in ACTION},
    **{n: "data_flow" for n in DATA_FLOW},
}

FEATURE_DICTIONARY: dict[str, str] = {
    "avg_duration": "mean of end_time - start_time over steps",
    "max_duration": "max step duration",
    "std_duration": "population std of step durations",
    "avg_delay": "mean inter-step delay, delay = next.start - prev.end clamped at 0 (0 for 1 step)",
    "max_delay": "max inter-step delay",
    "total_duration": "max(end_time) - min(start_time)",
    "execution_rate": "steps / max(total_duration, 1e-6)",
    "timing_entropy": "entropy of the 10-bin histogram of inter-step delays",
    "has_burst": "1 if some window of 3 consecutive delays has mean < 0.25 x mean delay",
    "burst_intensity": "mean delay / max(lowest burst-window mean, 1e-3); 0 without a burst",
    "unique_bigrams": "distinct consecutive tool pairs",
    "max_bigram_freq": "occurrences of the most frequent bigram",
    "bigram_diversity": "entropy of the bigram distribution",
    "unique_trigrams": "distinct consecutive tool triples",
    "trigram_diversity": "entropy of the trigram distribution",
    "repetition_ratio": "1 - unique_bigrams / total bigrams (0 without bigrams)",
    "max_consecutive_repeats": "longest run of one tool",
    "sequence_length": "number of steps",
    "unique_transitions": "distinct ordered pairs (a, b), a != b, of consecutive tools",
    "transition_entropy": "entropy of the distribution of tool changes a -> b, a != b",
    "has_loops": "1 if loop_count > 0",
    "loop_count": "revisits of a tool with >= 2 distinct other tools since its last use",
    "dependency_ratio": "steps with non-empty depends_on / steps",
    "total_dependencies": "sum of len(depends_on)",
    "rare_tool_ratio": "fraction of invocations whose tool has < 5% of invocations",
    "tool_count": "number of tool invocations",
    "unique_tools": "distinct tool names",
    "tool_diversity": "unique_tools / tool_count",
    "most_common_tool_freq": "share of invocations taken by the most used tool",
    "tool_transition_entropy": "same value as transition_entropy (kept as its own slot)",
    "file_read_count": "invocations of file_read",
    "web_fetch_count": "invocations of web_fetch",
    "tool_switching_rate": "consecutive pairs with differing tools / (steps - 1)",
    "unauthorized_tool_access": "count of steps flagged unauthorized",
    "tool_sequence_anomaly_score": "1 - share of bigrams found in a benign reference set (0 without one)",
    "avg_params_length": "mean params_length",
    "max_params_length": "max params_length",
    "avg_input_size": "mean input_size",
    "max_input_size": "max input_size",
    "std_input_size": "population std of input_size",
    "avg_output_size": "mean output_size",
    "max_output_size": "max output_size",
    "std_output_size": "population std of output_size",
    "avg_io_ratio": "mean of output_size / max(input_size, 1)",
    "max_io_ratio": "max per-step io ratio",
    "input_diversity": "distinct input_size values / steps",
    "output_diversity": "distinct output_size values / steps",
    "io_entropy": "entropy of the 10-bin histogram of output_size",
    "io_coupling": "Pearson correlation of input and output sizes (0 if either is constant)",
    "sensitive_data_mentions": "sum of sensitive_hits",
    "data_flow_complexity": "total_dependencies x avg_io_ratio",
}


def _entropy_of_counts(counts: Iterable[int]) -> float:
    counts = [c for c in counts if c > 0]
    total = sum(counts)
    if total == 0 or len(counts) <= 1:
        return 0.0
    return -sum((c / total) * math.log(c / total) for c in counts)


def histogram_entropy(values: Sequence[float], bins: int = HIST_BINS) -> float:
    """Entropy of a ``bins``-bin equal-width histogram over [min, max]."""
    if len(values) < 2:
        return 0.0
    lo, hi = min(values), max(values)
    if hi <= lo:
        return 0.0
    width = (hi - lo) / bins
    counts = [0] * bins
    for v in values:
        k = int((v - lo) / width)
        # the right edge belongs to the last bin
        counts[min(k, bins - 1)] += 1
    return _entropy_of_counts(counts)


def _mean(xs: Sequence[float]) -> float:
    return sum(xs) / len(xs) if xs else 0.0


def _pstd(xs: Sequence[float]) -> float:
    if len(xs) < 2:
        return 0.0
    m = _mean(xs)
    return math.sqrt(sum((x - m) ** 2 for x in xs) / len(xs))


def _pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    n = len(xs)
    if n < 2:
        return 0.0
    mx, my = _mean(xs), _mean(ys)
    sxx = sum((x - mx) ** 2 for x in xs)
    syy = sum((y - my) ** 2 for y in ys)
    if sxx == 0.0 or syy == 0.0:
        return 0.0
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    r = sxy / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def trace_bigrams(trace: ExecutionTrace) -> list[tuple[str, str]]:
    tools = [s.tool for s in trace.steps]
    return list(zip(tools, tools[1:]))


def reference_bigrams(traces: Iterable[ExecutionTrace]) -> frozenset[tuple[str, str]]:
    """Union of tool bigrams over ``traces`` (the harness passes benign training traces)."""
    ref: set[tuple[str, str]] = set()
    for t in traces:
        ref.update(trace_bigrams(t))
    return frozenset(ref)


def sequence_anomaly_score(
    trace: ExecutionTrace, reference: frozenset[tuple[str, str]] | None
) -> float:
    bigrams = trace_bigrams(trace)
    if not reference or not bigrams:
        return 0.0
    known = sum(1 for b in bigrams if b in reference)
    return 1.0 - known / len(bigrams)


def _loop_count(tools: Sequence[str]) -> int:
    last_seen: dict[str, int] = {}
    loops = 0
    for i, tool in enumerate(tools):
        j = last_seen.get(tool)
        if j is not None and len(set(tools[j + 1 : i])) >= LOOP_MIN_INTERVENING:
            loops += 1
        last_seen[tool] = i
    return loops


def _burst(delays: Sequence[float], mean_delay: float) -> tuple[float, float]:
    if len(delays) < BURST_WINDOW or mean_delay <= 0.0:
        return 0.0, 0.0
    lowest = min(
        sum(delays[i : i + BURST_WINDOW]) / BURST_WINDOW
        for i in range(len(delays) - BURST_WINDOW + 1)
    )
    if lowest < BURST_FACTOR * mean_delay:
        return 1.0, mean_delay / max(lowest, MIN_BURST_DELAY)
    return 0.0, 0.0


def _temporal(trace: ExecutionTrace) -> list[float]:
    steps = trace.steps
    n = len(steps)
    durations = [s.end_time - s.start_time for s in steps]
    delays = [max(0.0, b.start_time - a.end_time) for a, b in zip(steps, steps[1:])]
    total = trace.total_duration
    mean_delay = _mean(delays)
    has_burst, intensity = _burst(delays, mean_delay)
    return [
        _mean(durations),
        max(durations),
        _pstd(durations),
        mean_delay,
        max(delays) if delays else 0.0,
        total,
        n / max(total, MIN_DURATION),
        histogram_entropy(delays),
        has_burst,
        intensity,
    ]


def _sequence_and_action(
    trace: ExecutionTrace, reference: frozenset[tuple[str, str]] | None
) -> tuple[list[float], list[float]]:
    steps = trace.steps
    n = len(steps)
    tools = [s.tool for s in steps]
    bigrams = list(zip(tools, tools[1:]))
    trigrams = list(zip(tools, tools[1:], tools[2:]))
    bigram_counts = Counter(bigrams)
    trigram_counts = Counter(trigrams)
    transitions = Counter(b for b in bigrams if b[0] != b[1])
    tool_counts = Counter(tools)

    run = longest = 1
    for a, b in zip(tools, tools[1:]):
        run = run + 1 if a == b else 1
        longest = max(longest, run)

    loops = _loop_count(tools)
    n_dep_steps = sum(1 for s in steps if s.depends_on)
    total_deps = sum(len(s.depends_on) for s in steps)
    rare = sum(c for c in tool_counts.values() if c / n < RARE_TOOL_SHARE)
    transition_entropy = _entropy_of_counts(transitions.values())

    sequence = [
        float(len(bigram_counts)),
        float(max(bigram_counts.values(), default=0)),
        _entropy_of_counts(bigram_counts.values()),
        float(len(trigram_counts)),
        _entropy_of_counts(trigram_counts.values()),
        1.0 - len(bigram_counts) / len(bigrams) if bigrams else 0.0,
        float(longest),
        float(n),
        float(len(transitions)),
        transition_entropy,
        1.0 if loops else 0.0,
        float(loops),
        n_dep_steps / n,
        float(total_deps),
        rare / n,
    ]

    params = [s.params_length for s in steps]
    switches = sum(1 for a, b in zip(tools, tools[1:]) if a != b)
    action = [
        float(n),
        float(len(tool_counts)),
        len(tool_counts) / n,
        max(tool_counts.values()) / n,
        transition_entropy,
        float(tool_counts.get("file_read", 0)),
        float(tool_counts.get("web_fetch", 0)),
        switches / (n - 1) if n > 1 else 0.0,
        float(sum(1 for s in steps if s.unauthorized)),
        sequence_anomaly_score(trace, reference),
        _mean(params),
        float(max(params)),
    ]
    return sequence, action


def _data_flow(trace: ExecutionTrace, total_deps: float) -> list[float]:
    steps = trace.steps
    n = len(steps)
    ins = [float(s.input_size) for s in steps]
    outs = [float(s.output_size) for s in steps]
    ratios = [o / max(i, 1.0) for i, o in zip(ins, outs)]
    avg_ratio = _mean(ratios)
    return [
        _mean(ins),
        max(ins),
        _pstd(ins),
        _mean(outs),
        max(outs),
        _pstd(outs),
        avg_ratio,
        max(ratios),
        len(set(ins)) / n,
        len(set(outs)) / n,
        histogram_entropy(outs),
        _pearson(ins, outs),
        float(sum(s.sensitive_hits for s in steps)),
        total_deps * avg_ratio,
    ]


def extract_features(
    trace: ExecutionTrace, reference: frozenset[tuple[str, str]] | None = None
) -> np.ndarray:
    """Return the 51 base features of ``trace`` as a float64 vector.

    ``reference`` is the benign bigram set used by
    ``tool_sequence_anomaly_score``; without one that feature is 0.
    """
    temporal = _temporal(trace)
    sequence, action = _sequence_and_action(trace, reference)
    data_flow = _data_flow(trace, sequence[13])
    return np.array(temporal + sequence + action + data_flow, dtype=np.float64)


def extract_matrix(
    traces: Sequence[ExecutionTrace],
    reference: frozenset[tuple[str, str]] | None = None,
    model_aware: bool = False,
) -> np.ndarray:
    X = np.empty((len(traces), N_BASE + int(model_aware)), dtype=np.float64)
    for i, t in enumerate(traces):
        X[i, :N_BASE] = extract_features(t, reference)
        if model_aware:
            X[i, N_BASE] = MODEL_IDS.index(t.model_id)
    return X


def with_anomaly_scores(
    X: np.ndarray, traces: Sequence[ExecutionTrace], reference: frozenset[tuple[str, str]] | None
) -> np.ndarray:
    """Copy of ``X`` with the reference-dependent column recomputed for ``reference``."""
    out = X.copy()
    col = FEATURE_INDEX["tool_sequence_anomaly_score"]
    out[:, col] = [sequence_anomaly_score(t, reference) for t in traces]
    return out


def append_model_code(v: np.ndarray, model_id: str) -> np.ndarray:
    """Append the registry ordinal of ``model_id`` as feature 52."""
    if model_id not in MODEL_IDS:
        raise UnknownModelId(model_id)
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != N_BASE:
        raise DimensionMismatch(f"expected {N_BASE} base features, got {v.shape[-1]}")
    code = np.full(v.shape[:-1] + (1,), float(MODEL_IDS.index(model_id)))
    return np.concatenate([v, code], axis=-1)


def feature_names(model_aware: bool = False) -> tuple[str, ...]:
    return FEATURE_NAMES + ((MODEL_CODE_NAME,) if model_aware else ())


@dataclass(frozen=True)
class Standardizer:
    """Per-feature z-score transform fitted on a training matrix.

    The model-code column, when present, passes through untouched.
    """

    mean: np.ndarray
    scale: np.ndarray

    @property
    def n_features(self) -> int:
        return int(self.mean.shape[0])

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        width = X.shape[-1]
        if width == self.n_features:
            return (X - self.mean) / self.scale
        if width == self.n_features + 1:
            out = X.copy()
            out[..., :-1] = (X[..., :-1] - self.mean) / self.scale
            return out
        raise DimensionMismatch(
            f"standardizer fitted on {self.n_features} features, got {width}"
        )

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["scale"], dtype=np.float64))


def fit_standardizer(X: np.ndarray, n_scaled: int | None = None) -> Standardizer:
    """Fit means and population sigmas (floored at 1e-12) on the first
    ``n_scaled`` columns of ``X`` (all columns by default)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InsufficientData("need at least 2 vectors to fit a standardizer")
    if n_scaled is not None:
        X = X[:, :n_scaled]
    mean = X.mean(axis=0)
    scale = np.maximum(X.std(axis=0), SIGMA_FLOOR)
    return Standardizer(mean=mean, scale=scale)


def transform(std: Standardizer, v: np.ndarray) -> np.ndarray:
    return std.transform(v)
