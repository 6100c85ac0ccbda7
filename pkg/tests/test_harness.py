from __future__ import annotations

import numpy as np
import pytest

from conftest import make_trace
from tracewatch.classifiers.metrics import EvalMetrics
from tracewatch.errors import ConfigError, InsufficientClassSamples, InsufficientModels
from tracewatch.features import CATEGORY, FEATURE_NAMES
from tracewatch.harness import (
    DetectionMatrix,
    ExperimentData,
    cohens_d,
    coefficient_of_variation,
    feature_stability,
    make_splits,
    run_experiment,
    run_matrix,
    run_strategy,
    vote,
)
from tracewatch.synth import CorpusSpec, build_corpus
from tracewatch.trace import MODEL_IDS


@pytest.fixture(scope="module")
def small_data(small_corpus):
    return ExperimentData(small_corpus.traces)


def _rows(tools, params=10):
    return [dict(tool=tool, params_length=params, input_size=100, output_size=100,
                 start_time=float(i), end_time=i + 0.5) for i, tool in enumerate(tools)]


# splits


def test_default_split_sizes(default_corpus):
    plan = make_splits(default_corpus.traces, seed=42)
    for m in MODEL_IDS[:5]:
        assert (len(plan.train[m]), len(plan.test[m])) == (160, 40)
    # 99 per class: floor(19.8) = 19 of each to test
    assert (len(plan.train["deepseek-chat-v3.1"]), len(plan.test["deepseek-chat-v3.1"])) == (160, 38)


def test_split_stratified_disjoint_deterministic(default_corpus):
    a = make_splits(default_corpus.traces, seed=42)
    b = make_splits(default_corpus.traces, seed=42)
    assert a == b
    by_id = {t.trace_id: t for t in default_corpus.traces}
    for m in a.models:
        assert not set(a.train[m]) & set(a.test[m])
        assert all(by_id[i].model_id == m for i in a.train[m] + a.test[m])
        n_bd = sum(by_id[i].is_backdoor for i in a.test[m])
        assert n_bd == len(a.test[m]) // 2
    assert make_splits(default_corpus.traces, seed=7).test != a.test


def test_split_needs_five_per_class():
    traces = build_corpus(CorpusSpec({"gpt-5.1": (4, 10)})).traces
    with pytest.raises(InsufficientClassSamples):
        make_splits(traces)


# matrix


def test_gap_identity(default_experiment):
    mx = default_experiment.matrix
    n = len(mx.models)
    assert len(mx.cells) == n * n
    diag = [mx.cells[(m, m)].accuracy for m in mx.models]
    off = [mx.cells[(a, b)].accuracy for a in mx.models for b in mx.models if a != b]
    assert mx.diagonal_mean == pytest.approx(sum(diag) / n, abs=1e-15)
    assert mx.gap == pytest.approx(sum(diag) / n - sum(off) / len(off), abs=1e-15)


def test_single_model_matrix():
    traces = build_corpus(CorpusSpec({"grok-4.1-fast": (20, 20)})).traces
    data = ExperimentData(traces)
    plan = make_splits(data, seed=1)
    mx = run_matrix(data, plan)
    assert mx.models == ("grok-4.1-fast",)
    assert mx.gap is None and mx.off_diagonal_mean is None
    single = run_strategy(data, plan, "single", matrix=mx)
    pooled = run_strategy(data, plan, "pooled")
    assert pooled.overall_acc == single.overall_acc == mx.diagonal_mean
    res = run_experiment(data, seed=1)
    assert res.stability is None


def test_matrix_with_svm(small_data):
    plan = make_splits(small_data, seed=3)
    mx = run_matrix(small_data, plan, "svm")
    assert all(0.0 <= c.accuracy <= 1.0 for c in mx.cells.values())


# strategies


def test_vote_tie_goes_to_backdoor():
    preds = np.array([[1, 1, 0], [1, 0, 0], [1, 1, 0], [0, 0, 0], [0, 1, 1], [0, 0, 0]], dtype=bool)
    assert list(vote(preds)) == [True, True, False]


class _FixedDetector:
    def __init__(self, verdict: bool):
        self.verdict = verdict

    def predict(self, traces, base=None):
        return np.full(len(traces), self.verdict)


def test_voting_strategy_tie(small_data):
    plan = make_splits(small_data, seed=2)
    dets = {m: _FixedDetector(i < 3) for i, m in enumerate(plan.models)}
    mx = DetectionMatrix(plan.models, {}, dets)
    res = run_strategy(small_data, plan, "voting", matrix=mx)
    # 3-3 split on every trace: all called backdoor
    assert res.pooled.recall == 1.0 and res.pooled.tn == 0
    assert res.same_model_acc == res.cross_model_acc == res.overall_acc == 0.5


def test_strategy_identities(default_experiment):
    s = default_experiment.strategies
    assert list(s) == ["single", "pooled", "voting", "model_aware"]
    for name in ("pooled", "voting", "model_aware"):
        r = s[name]
        assert r.same_model_acc == r.cross_model_acc == r.overall_acc
        assert r.gap == 0.0
        assert r.pooled.accuracy == r.overall_acc
        assert set(r.per_model) == set(MODEL_IDS)
        assert sum(e.total for e in r.per_model.values()) == r.pooled.total == 238
    single = s["single"]
    mx = default_experiment.matrix
    assert (single.same_model_acc, single.cross_model_acc, single.gap) == (
        mx.diagonal_mean, mx.off_diagonal_mean, mx.gap)


def test_unknown_strategy(small_data):
    with pytest.raises(ConfigError):
        run_strategy(small_data, make_splits(small_data), "stacking")


# stability


def test_cv_two_point():
    assert coefficient_of_variation([1.0, 3.0]) == pytest.approx(0.5)
    assert coefficient_of_variation([0.0, 0.0]) is None
    assert coefficient_of_variation([2.0, 2.0]) == 0.0


def test_hand_built_stability():
    traces = []
    for m, tools in (("gpt-5.1", ["file_read", "search", "search"]),
                     ("claude-sonnet-4.5", ["file_read", "file_read", "file_read"])):
        for i, label in enumerate(["benign", "benign", "backdoor", "backdoor"]):
            tm = "TM1" if label == "backdoor" else "none"
            traces.append(make_trace(_rows(tools), model_id=m, trace_id=f"{m}-{i}", label=label, threat_model=tm))
    rep = feature_stability(traces)
    assert rep.cv_of("file_read_count") == pytest.approx(0.5)
    assert rep.cv_of("avg_params_length") == 0.0
    assert rep.band("avg_params_length") == "stable"
    j = FEATURE_NAMES.index("avg_params_length")
    assert rep.cohens_d["gpt-5.1"][j] == 0.0
    assert rep.band("unauthorized_tool_access") == "undefined"
    roll = rep.rollup()
    assert sum(c["total"] for c in roll.values()) == 51


def test_cohens_d_values():
    assert cohens_d(np.array([3.0, 5.0]), np.array([1.0, 3.0])) == pytest.approx(2 / np.sqrt(2))
    assert cohens_d(np.ones(4), np.ones(4)) == 0.0
    assert cohens_d(np.full(4, 2.0), np.ones(4)) is None


def test_cohens_d_increases_with_shift():
    rng = np.random.default_rng(0)
    benign = rng.normal(size=200)
    noise = rng.normal(size=200)
    ds = [cohens_d(noise + shift, benign) for shift in (0.0, 0.5, 1.0, 2.0)]
    assert all(a < b for a, b in zip(ds, ds[1:]))


def test_stability_needs_two_models():
    traces = build_corpus(CorpusSpec({"gpt-5.1": (5, 5)})).traces
    with pytest.raises(InsufficientModels):
        feature_stability(traces)


def test_default_stability_pattern(default_experiment):
    rep = default_experiment.stability
    unstable_temporal = sum(
        1 for n in FEATURE_NAMES if CATEGORY[n] == "temporal" and (rep.cv_of(n) or 0) > 0.8
    )
    stable_sequence = sum(
        1 for n in FEATURE_NAMES
        if CATEGORY[n] == "sequence" and rep.cv_of(n) is not None and rep.cv_of(n) < 0.2
    )
    assert unstable_temporal >= 3 and stable_sequence >= 5
    for m in MODEL_IDS:
        name, d = rep.top_discriminative(m)
        assert abs(d) > 1.0


def test_dataset_summary(default_experiment):
    d = default_experiment.dataset
    ds = d["deepseek-chat-v3.1"]
    assert (ds["benign"], ds["backdoor"], ds["total"], ds["train"], ds["test"]) == (99, 99, 198, 160, 38)
    assert ds["tm1"] + ds["tm2"] == 99 and abs(ds["tm1"] - ds["tm2"]) == 1


def test_eval_metrics_type(default_experiment):
    assert all(isinstance(c, EvalMetrics) for c in default_experiment.matrix.cells.values())
