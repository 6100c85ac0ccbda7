from __future__ import annotations

import numpy as np
import pytest

from tracewatch.detector import TrainedDetector, fit_detector, trace_labels
from tracewatch.errors import DimensionMismatch, MalformedModel
from tracewatch.features import N_BASE


@pytest.fixture(scope="module")
def gpt_traces(small_corpus):
    return [t for t in small_corpus.traces if t.model_id == "gpt-5.1"]


def test_fit_and_score(gpt_traces):
    det = fit_detector(gpt_traces, "forest", seed=3)
    scores = det.score_traces(gpt_traces)
    assert scores.shape == (len(gpt_traces),)
    assert np.all((scores >= 0) & (scores <= 1))
    # training data is fit almost perfectly
    assert (det.predict(gpt_traces) == trace_labels(gpt_traces).astype(bool)).mean() >= 0.9
    assert det.source_models == ("gpt-5.1",)
    score, label = det.score_trace(gpt_traces[0])
    assert score == pytest.approx(scores[0]) and label == (score > 0.5)


def test_reference_from_benign_training_traces(gpt_traces):
    det = fit_detector(gpt_traces, "svm", seed=3)
    bigrams = set()
    for t in gpt_traces:
        if not t.is_backdoor:
            tools = [s.tool for s in t.steps]
            bigrams.update(zip(tools, tools[1:]))
    assert det.reference == frozenset(bigrams)


@pytest.mark.parametrize("kind", ["forest", "svm"])
def test_save_load_round_trip(tmp_path, small_corpus, kind):
    det = fit_detector(small_corpus.traces, kind, seed=5, model_aware=True, strategy="model_aware")
    path = tmp_path / "det.json"
    det.save(path)
    again = TrainedDetector.load(path)
    assert again.model_aware and again.strategy == "model_aware"
    assert len(again.feature_names) == N_BASE + 1
    np.testing.assert_array_equal(again.score_traces(small_corpus.traces), det.score_traces(small_corpus.traces))
    assert again.to_json() == det.to_json()


def test_precomputed_base_matches(small_corpus):
    from tracewatch.features import extract_matrix

    det = fit_detector(small_corpus.traces[:60], "forest", seed=1)
    base = extract_matrix(small_corpus.traces)
    np.testing.assert_array_equal(
        det.score_traces(small_corpus.traces, base), det.score_traces(small_corpus.traces)
    )


def test_width_mismatch(gpt_traces):
    det = fit_detector(gpt_traces, "forest", seed=3)
    with pytest.raises(DimensionMismatch):
        det.score_matrix(np.zeros((2, N_BASE + 1)))


def test_model_file_without_metadata(gpt_traces):
    from tracewatch.classifiers.persist import model_to_json

    det = fit_detector(gpt_traces, "svm", seed=3)
    bare = model_to_json(det.classifier, det.feature_names)
    with pytest.raises(MalformedModel):
        TrainedDetector.from_json(bare)
