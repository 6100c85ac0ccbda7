"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Tolerances are the published targets; nothing here is loosened to make a run
pass. Run with ``pytest tests/test_acceptance.py -v`` to see the lines.
"""

from __future__ import annotations

import json
import math
import time

import numpy as np
import pytest

from blobs import separable_blobs
from conftest import make_trace
from test_features import GOLDEN, _shift, check_bounds
from tracewatch.classifiers import train_classifier
from tracewatch.classifiers.metrics import auc_roc, compute_metrics
from tracewatch.classifiers.persist import model_to_json
from tracewatch.cli import main
from tracewatch.detector import fit_detector
from tracewatch.features import CATEGORY, FEATURE_INDEX, FEATURE_NAMES, extract_features, extract_matrix
from tracewatch.harness import ExperimentData, make_splits, run_experiment, run_matrix
from tracewatch.synth import CorpusSpec, build_corpus, load_corpus_spec
from tracewatch.trace import MODEL_IDS

# Seed-42 default pipeline, pinned on CPython 3.10 / numpy 2.2. Float
# summation order is fixed in the code, so these should hold on any IEEE-754
# platform with the same numpy RNG streams.
PINNED_CORPUS_HASH = "84b5de8cdfec4481b5f05ed11e962cf7c7bec3cd417fbcedc1b71d8bf00e2c93"
PINNED_RESULTS_HASH = "c196d0c0ee81b7837f1b77aed77c801a15df06a334e0b93a7df3a53c61118f87"


@pytest.fixture
def verdict(capsys):
    def report(number: int, title: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} | {detail}")
        assert ok, detail

    return report


@pytest.fixture(scope="module")
def timed_run():
    t0 = time.perf_counter()
    corpus = build_corpus(load_corpus_spec())
    res = run_experiment(ExperimentData(corpus.traces), seed=42)
    return res, time.perf_counter() - t0


@pytest.fixture(scope="module")
def signature_corpus():
    # 100 traces of each kind per model
    return build_corpus(CorpusSpec.uniform(200, master_seed=42))


def test_criterion_01_gap(timed_run, verdict):
    res, seconds = timed_run
    m = res.matrix
    ok = m.diagonal_mean >= 0.85 and m.gap >= 0.25 and seconds <= 300
    verdict(1, "gap reproduction", ok,
            f"diagonal {m.diagonal_mean:.4f} (>=0.85), gap {m.gap:.4f} (>=0.25), runtime {seconds:.1f}s (<=300)")


def test_criterion_02_mitigation(timed_run, verdict):
    res, _ = timed_run
    ma, vt = res.strategies["model_aware"], res.strategies["voting"]
    gap = abs(ma.same_model_acc - ma.cross_model_acc)
    margin = ma.overall_acc - vt.overall_acc
    ok = ma.overall_acc >= 0.85 and gap <= 0.02 and margin >= 0.10
    verdict(2, "mitigation reproduction", ok,
            f"model_aware {ma.overall_acc:.4f} (>=0.85), same/cross gap {gap:.4f} (<=0.02), "
            f"lead over voting {margin:.4f} (>=0.10)")


def test_criterion_03_signatures(signature_corpus, verdict):
    X = extract_matrix(signature_corpus.traces)
    model = np.array([t.model_id for t in signature_corpus.traces])
    tm = np.array([t.metadata.threat_model for t in signature_corpus.traces])
    fr, io = FEATURE_INDEX["file_read_count"], FEATURE_INDEX["avg_io_ratio"]
    problems, tm1_means, benign_means = [], [], []
    for m in MODEL_IDS:
        tm1 = X[(model == m) & (tm == "TM1"), fr]
        ben = X[(model == m) & (tm == "none"), fr]
        if len(tm1) != 100:
            problems.append(f"{m}: {len(tm1)} TM1 traces")
        tm1_means.append(tm1.mean())
        benign_means.append(ben[:100].mean())
        if not 10 <= tm1.mean() <= 15:
            problems.append(f"{m} TM1 file_read {tm1.mean():.2f}")
        if not 1.6 <= ben[:100].mean() <= 2.6:
            problems.append(f"{m} benign file_read {ben[:100].mean():.2f}")
    # TM2 inflates I/O relative to each model's own baseline, so the ratio
    # targets apply to the cross-model pool
    tm2_io = X[tm == "TM2", io].mean()
    ben_io = X[tm == "none", io].mean()
    if not 2.6 <= tm2_io <= 3.8:
        problems.append(f"TM2 io_ratio {tm2_io:.3f}")
    if not 0.9 <= ben_io <= 1.3:
        problems.append(f"benign io_ratio {ben_io:.3f}")
    verdict(3, "signature fidelity", not problems,
            f"TM1 file_read {min(tm1_means):.2f}..{max(tm1_means):.2f} in [10,15], "
            f"benign {min(benign_means):.2f}..{max(benign_means):.2f} in [1.6,2.6], "
            f"TM2 io {tm2_io:.3f} in [2.6,3.8], benign io {ben_io:.3f} in [0.9,1.3]"
            + (f"; {problems}" if problems else ""))


def test_criterion_04_stability(timed_run, verdict):
    rep = timed_run[0].stability
    cv = {n: rep.cv_of(n) for n in FEATURE_NAMES}
    unstable = sum(1 for n in FEATURE_NAMES if CATEGORY[n] == "temporal" and cv[n] is not None and cv[n] > 0.8)
    stable = sum(1 for n in FEATURE_NAMES if CATEGORY[n] == "sequence" and cv[n] is not None and cv[n] < 0.2)
    verdict(4, "stability structure", unstable >= 3 and stable >= 5,
            f"temporal CV>0.8: {unstable}/10 (>=3), sequence CV<0.2: {stable}/15 (>=5)")


def _pairwise_auc(scores, labels):
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    diff = pos[:, None] - neg[None, :]
    return ((diff > 0).sum() + 0.5 * (diff == 0).sum()) / (len(pos) * len(neg))


def test_criterion_05_metric_oracles(verdict):
    rng = np.random.default_rng(5)
    worst = 0.0
    identity_failures = 0
    for k in range(100):
        n = int(rng.integers(2, 300))
        labels = rng.integers(0, 2, n)
        labels[:2] = (0, 1)
        scores = rng.random(n)
        if k % 3 == 0:
            scores = np.round(scores, 1)  # heavy ties
        worst = max(worst, abs(auc_roc(scores, labels) - _pairwise_auc(scores, labels)))
        m = compute_metrics(scores, labels)
        tp, fp, tn, fn = m.tp, m.fp, m.tn, m.fn
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        checks = (
            tp + fp + tn + fn == n,
            tp + fn == int(labels.sum()),
            tp + fp == int((scores > 0.5).sum()),
            m.accuracy == (tp + tn) / n,
            m.precision == p,
            m.recall == r,
            m.f1 == (2 * p * r / (p + r) if p + r else 0.0),
        )
        identity_failures += not all(checks)
    verdict(5, "metric oracle equivalence", worst <= 1e-12 and identity_failures == 0,
            f"max |AUC - pairwise| {worst:.2e} (<=1e-12) over 100 sets, identity failures {identity_failures}")


def test_criterion_06_classifier_sanity(verdict):
    X, y = separable_blobs(500, margin=2.0, seed=6)
    details, ok = [], True
    for kind in ("forest", "svm"):
        a = train_classifier(kind, X, y, 42)
        b = train_classifier(kind, X, y, 42)
        acc = float(((a.decision_scores(X) > a.threshold) == y.astype(bool)).mean())
        names = ("x0", "x1")
        same = model_to_json(a, names) == model_to_json(b, names)
        same_pred = np.array_equal(a.decision_scores(X), b.decision_scores(X))
        ok &= acc >= 0.99 and same and same_pred
        details.append(f"{kind} acc {acc:.4f} identical={same and same_pred}")
    verdict(6, "classifier sanity", ok, ", ".join(details) + " (acc >= 0.99)")


def _random_trace(rng, i):
    n = int(rng.integers(1, 40))
    tools = ("file_read", "web_fetch", "database_query", "search", "plan", "code_exec")
    rows, t = [], int(rng.integers(0, 10_000))
    for k in range(n):
        t += int(rng.integers(0, 400))
        dur = int(rng.integers(1, 800))
        deps = sorted(set(rng.integers(0, k, size=int(rng.integers(0, 3))).tolist())) if k else []
        rows.append(dict(tool=tools[int(rng.integers(0, len(tools)))],
                         params_length=int(rng.integers(0, 400)),
                         input_size=int(rng.integers(0, 50_000)),
                         output_size=int(rng.integers(0, 50_000)),
                         start_time=t / 64, end_time=(t + dur) / 64, depends_on=tuple(deps),
                         sensitive_hits=int(rng.integers(0, 4)), unauthorized=bool(rng.random() < 0.1)))
        t += dur
    return make_trace(rows, trace_id=f"r-{i:04d}")


def test_criterion_07_feature_correctness(golden_trace, verdict):
    from tracewatch.errors import TracewatchError

    v = extract_features(golden_trace)
    golden_ok = all(math.isclose(v[FEATURE_INDEX[n]], GOLDEN[n], rel_tol=1e-12, abs_tol=1e-12)
                    for n in FEATURE_NAMES)
    rng = np.random.default_rng(7)
    ref = frozenset({("plan", "search"), ("search", "file_read")})
    failures = 0
    for i in range(1000):
        trace = _random_trace(rng, i)
        f = extract_features(trace, ref)
        try:
            check_bounds(trace, f)
            shifted = extract_features(_shift(trace, int(rng.integers(1, 5000))), ref)
            failures += not np.array_equal(shifted, f)
        except (AssertionError, TracewatchError):
            failures += 1
    verdict(7, "feature correctness", golden_ok and failures == 0,
            f"golden 51-vector exact={golden_ok}, property failures {failures}/1000")


def test_criterion_08_determinism(tmp_path, verdict):
    outs = [tmp_path / "run1", tmp_path / "run2"]
    codes = [main(["experiment", "--seed", "42", "--out", str(o)]) for o in outs]
    names = sorted(p.name for p in outs[0].iterdir())
    same_names = names == sorted(p.name for p in outs[1].iterdir())
    differing = [n for n in names if (outs[0] / n).read_bytes() != (outs[1] / n).read_bytes()]
    man = json.loads((outs[0] / "manifest.json").read_text())
    ok = codes == [0, 0] and same_names and not differing and len(names) >= 7
    verdict(8, "end-to-end determinism", ok,
            f"{len(names)} files, differing {differing}, results_hash {man['results_hash'][:16]}")


def test_pinned_pipeline_hash(tmp_path):
    assert main(["experiment", "--seed", "42", "--out", str(tmp_path)]) == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["corpus_hash"] == PINNED_CORPUS_HASH
    assert man["results_hash"] == PINNED_RESULTS_HASH


def test_criterion_09_latency(default_corpus, verdict):
    data = ExperimentData(default_corpus.traces)
    plan = make_splits(data, 42)
    det = fit_detector(data.select(plan.train["gpt-5.1"])[0], "forest", 42)
    traces = default_corpus.traces[:1000]
    for t in traces[:20]:
        det.score_trace(t)  # warm-up
    times = np.empty(len(traces))
    for i, t in enumerate(traces):
        t0 = time.perf_counter()
        det.score_trace(t)
        times[i] = time.perf_counter() - t0
    p50, p99 = np.percentile(times, [50, 99]) * 1000
    verdict(9, "latency contract", p99 <= 1.0,
            f"extract+standardize+forest p99 {p99:.3f} ms (<=1 ms), p50 {p50:.3f} ms over {len(traces)} traces")


def test_criterion_10_null_control(null_corpus, verdict):
    data = ExperimentData(null_corpus.traces)
    m = run_matrix(data, make_splits(data, 42))
    verdict(10, "null control", -0.05 <= m.gap <= 0.05,
            f"gap {m.gap:.4f} in [-0.05, 0.05] (diagonal {m.diagonal_mean:.4f})")
