from __future__ import annotations

import json

import pytest

from conftest import GOLDEN_ROWS, make_trace
from tracewatch.errors import (
    CorpusLoadError,
    InvariantViolation,
    IoFailure,
    MalformedSyntax,
    UnknownModelId,
)
from tracewatch.trace import (
    MODEL_IDS,
    PROVIDERS,
    StepRecord,
    TraceMetadata,
    corpus_hash,
    load_corpus,
    model_code,
    parse_trace,
    serialize_trace,
    trace_relpath,
    write_trace,
)


def test_registry_is_closed_and_ordered():
    assert MODEL_IDS == (
        "gpt-5.1",
        "claude-sonnet-4.5",
        "grok-4.1-fast",
        "llama-4-maverick",
        "gpt-oss-120b",
        "deepseek-chat-v3.1",
    )
    assert PROVIDERS["claude-sonnet-4.5"] == "Anthropic"
    assert PROVIDERS["gpt-oss-120b"] == "OpenAI"
    assert model_code("gpt-5.1") == 0
    assert model_code("deepseek-chat-v3.1") == 5
    with pytest.raises(UnknownModelId):
        model_code("gpt-6")


def test_single_step_zero_sizes_serializes_one_step():
    t = make_trace([dict(tool="plan", params_length=0, input_size=0, output_size=0,
                         start_time=0.0, end_time=0.5)])
    obj = json.loads(serialize_trace(t))
    assert len(obj["steps"]) == 1
    assert list(obj) == ["metadata", "steps"]
    assert obj["steps"][0]["input_size"] == 0


def test_serialization_is_canonical(golden_trace):
    text = serialize_trace(golden_trace)
    rebuilt = make_trace([dict(r) for r in GOLDEN_ROWS])
    assert serialize_trace(rebuilt).encode() == text.encode()
    assert '"start_time":1.500000' in text
    assert "\n" not in text


def test_round_trip_identity(golden_trace, small_corpus):
    assert parse_trace(serialize_trace(golden_trace)) == golden_trace
    for t in small_corpus.traces:
        assert parse_trace(serialize_trace(t)) == t


def test_end_not_after_start_rejected(golden_trace):
    obj = json.loads(serialize_trace(golden_trace))
    obj["steps"][2]["end_time"] = obj["steps"][2]["start_time"]
    with pytest.raises(InvariantViolation) as info:
        parse_trace(json.dumps(obj))
    assert info.value.field.endswith("end_time")


def test_unknown_model_rejected(golden_trace):
    obj = json.loads(serialize_trace(golden_trace))
    obj["metadata"]["model_id"] = "gpt-6"
    with pytest.raises(UnknownModelId):
        parse_trace(json.dumps(obj))


@pytest.mark.parametrize("mutate", [
    lambda o: o["steps"][3].update(depends_on=[3]),
    lambda o: o["steps"][3].update(depends_on=[4]),
    lambda o: o["steps"][1].update(index=7),
    lambda o: o["steps"][0].update(input_size=-1),
    lambda o: o["steps"][0].update(sensitive_hits=-2),
    lambda o: o["metadata"].update(threat_model="TM1"),
    lambda o: o["metadata"].update(label="backdoor"),
    lambda o: o["metadata"].update(task_category="gardening"),
    lambda o: o["metadata"].update(provider="Anthropic"),
    lambda o: o.update(steps=[]),
])
def test_invariants_rechecked_on_load(golden_trace, mutate):
    obj = json.loads(serialize_trace(golden_trace))
    mutate(obj)
    with pytest.raises(InvariantViolation):
        parse_trace(json.dumps(obj))


def test_steps_must_be_sorted_by_start(golden_trace):
    obj = json.loads(serialize_trace(golden_trace))
    obj["steps"][4]["start_time"] = 0.2
    obj["steps"][4]["end_time"] = 0.4
    with pytest.raises(InvariantViolation):
        parse_trace(json.dumps(obj))


@pytest.mark.parametrize("text", [
    "{not json",
    "[]",
    '{"metadata": {}, "steps": []}',
    '{"metadata": 3, "steps": []}',
])
def test_malformed_syntax(text):
    with pytest.raises(MalformedSyntax):
        parse_trace(text)


def test_bool_not_accepted_as_int(golden_trace):
    obj = json.loads(serialize_trace(golden_trace))
    obj["steps"][0]["input_size"] = True
    with pytest.raises(MalformedSyntax):
        parse_trace(json.dumps(obj))


def test_direct_construction_validates():
    with pytest.raises(InvariantViolation):
        StepRecord(index=0, tool="plan", params_length=0, input_size=0, output_size=0,
                   start_time=1.0, end_time=1.0)
    with pytest.raises(UnknownModelId):
        TraceMetadata("x", "gpt-6", "OpenAI", "planning", "benign", "none", 0)


def test_total_duration(golden_trace):
    assert golden_trace.total_duration == 9.0


def test_load_empty_directory(tmp_path):
    assert load_corpus(tmp_path) == ([], [])


def test_load_missing_path(tmp_path):
    with pytest.raises(IoFailure):
        load_corpus(tmp_path / "nope")


def test_load_sorted_and_stable(tmp_path, small_corpus):
    traces = small_corpus.traces[:200]
    for t in reversed(traces):
        write_trace(t, tmp_path)
    loaded, errors = load_corpus(tmp_path)
    assert errors == []
    assert len(loaded) == len(traces)
    assert [t.trace_id for t in loaded] == sorted(t.trace_id for t in traces)
    assert load_corpus(tmp_path)[0] == loaded
    assert corpus_hash(loaded) == corpus_hash(traces)
    assert trace_relpath(traces[0]).parts == (traces[0].model_id, f"{traces[0].trace_id}.json")


def test_one_corrupt_file_among_ten(tmp_path, small_corpus):
    paths = [write_trace(t, tmp_path) for t in small_corpus.traces[:10]]
    paths[4].write_text('{"metadata": {"trace_id": ', encoding="utf-8")
    loaded, errors = load_corpus(tmp_path)
    assert len(loaded) == 9
    assert len(errors) == 1 and errors[0][0] == paths[4]
    with pytest.raises(CorpusLoadError) as info:
        load_corpus(tmp_path, strict=True)
    assert str(paths[4]) in str(info.value)


def test_jsonl_records(tmp_path, small_corpus):
    traces = small_corpus.traces[:5]
    (tmp_path / "batch.jsonl").write_text(
        "\n".join(serialize_trace(t) for t in traces) + "\n", encoding="utf-8"
    )
    loaded, errors = load_corpus(tmp_path)
    assert errors == [] and loaded == sorted(traces, key=lambda t: t.trace_id)


def test_manifest_is_not_a_trace(tmp_path, small_corpus):
    write_trace(small_corpus.traces[0], tmp_path)
    (tmp_path / "manifest.json").write_text("{}", encoding="utf-8")
    loaded, errors = load_corpus(tmp_path)
    assert len(loaded) == 1 and errors == []
