from __future__ import annotations

import pytest

from tracewatch.synth import CorpusSpec, build_corpus, load_corpus_spec
from tracewatch.trace import ExecutionTrace, TraceMetadata, steps_from_rows

# Hand-built 5-step trace; its feature vector is worked out by hand in
# test_features.py.
GOLDEN_ROWS = [
    dict(tool="file_read", params_length=10, input_size=100, output_size=200,
         start_time=0.0, end_time=1.0, depends_on=(), sensitive_hits=0, unauthorized=False),
    dict(tool="file_read", params_length=20, input_size=100, output_size=400,
         start_time=1.5, end_time=3.5, depends_on=(0,), sensitive_hits=2, unauthorized=False),
    dict(tool="web_fetch", params_length=30, input_size=200, output_size=200,
         start_time=3.5, end_time=4.0, depends_on=(), sensitive_hits=0, unauthorized=False),
    dict(tool="search", params_length=40, input_size=50, output_size=0,
         start_time=4.0, end_time=5.0, depends_on=(1, 2), sensitive_hits=1, unauthorized=True),
    dict(tool="file_read", params_length=50, input_size=0, output_size=100,
         start_time=8.0, end_time=9.0, depends_on=(3,), sensitive_hits=0, unauthorized=False),
]


def make_trace(rows, model_id="gpt-5.1", trace_id="t-0001", label="benign",
               threat_model="none", task="web_research", seed=1) -> ExecutionTrace:
    from tracewatch.trace import PROVIDERS

    meta = TraceMetadata(
        trace_id=trace_id,
        model_id=model_id,
        provider=PROVIDERS[model_id],
        task_category=task,
        label=label,
        threat_model=threat_model,
        generator_seed=seed,
    )
    return ExecutionTrace(metadata=meta, steps=steps_from_rows(rows))


@pytest.fixture
def golden_trace() -> ExecutionTrace:
    return make_trace(GOLDEN_ROWS)


@pytest.fixture(scope="session")
def default_corpus():
    return build_corpus(load_corpus_spec())


@pytest.fixture(scope="session")
def small_corpus():
    return build_corpus(CorpusSpec.uniform(10))


@pytest.fixture(scope="session")
def default_experiment(default_corpus):
    from tracewatch.harness import ExperimentData, run_experiment

    return run_experiment(ExperimentData(default_corpus.traces), seed=42)


def identical_profiles():
    """Every model gets gpt-5.1's behavior; only the model id differs."""
    import dataclasses

    from tracewatch.synth import load_profiles

    profiles = load_profiles()
    base = profiles["gpt-5.1"]
    return {m: dataclasses.replace(base, model_id=m) for m in profiles}


@pytest.fixture(scope="session")
def null_corpus():
    return build_corpus(load_corpus_spec(), profiles=identical_profiles())
