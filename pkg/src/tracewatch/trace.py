"""Execution-trace data model and its canonical JSON form.

A trace file looks like::

    {"metadata":{"trace_id":...,"model_id":...,"provider":...,
                 "task_category":...,"label":...,"threat_model":...,
                 "generator_seed":...},
     "steps":[{"index":0,"tool":...,"params_length":...,"input_size":...,
               "output_size":...,"start_time":0.000000,"end_time":1.250000,
               "depends_on":[],"sensitive_hits":0,"unauthorized":false}, ...]}

Keys always appear in the order above, times are rendered with exactly six
decimals, and the whole record sits on a single line, so equal traces
serialize to identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from tracewatch.errors import (
    CorpusLoadError,
    InvariantViolation,
    IoFailure,
    MalformedSyntax,
    TraceError,
    UnknownModelId,
)

logger = logging.getLogger(__name__)

# Canonical registry; the position of each id is its model code.
MODEL_REGISTRY: tuple[tuple[str, str], ...] = (
    ("gpt-5.1", "OpenAI"),
    ("claude-sonnet-4.5", "Anthropic"),
    ("grok-4.1-fast", "XAI"),
    ("llama-4-maverick", "Meta"),
    ("gpt-oss-120b", "OpenAI"),
    ("deepseek-chat-v3.1", "DeepSeek"),
)
MODEL_IDS: tuple[str, ...] = tuple(m for m, _ in MODEL_REGISTRY)
PROVIDERS: dict[str, str] = dict(MODEL_REGISTRY)

TASK_CATEGORIES = ("web_research", "data_analysis", "code_generation", "planning")
LABELS = ("benign", "backdoor")
THREAT_MODELS = ("none", "TM1", "TM2")

TIME_DECIMALS = 6

_METADATA_KEYS = (
    "trace_id",
    "model_id",
    "provider",
    "task_category",
    "label",
    "threat_model",
    "generator_seed",
)


def model_code(model_id: str) -> int:
    try:
        return MODEL_IDS.index(model_id)
    except ValueError:
        raise UnknownModelId(model_id) from None


def _quantize(t: float) -> float:
    # Times are stored at the precision they are written with, which is what
    # makes parse(serialize(t)) == t hold exactly.
    return round(float(t), TIME_DECIMALS)


@dataclass(frozen=True)
class StepRecord:
    index: int
    tool: str
    params_length: int
    input_size: int
    output_size: int
    start_time: float
    end_time: float
    depends_on: tuple[int, ...] = ()
    sensitive_hits: int = 0
    unauthorized: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "start_time", _quantize(self.start_time))
        object.__setattr__(self, "end_time", _quantize(self.end_time))
        object.__setattr__(self, "depends_on", tuple(int(d) for d in self.depends_on))
        where = f"steps[{self.index}]"
        if self.index < 0:
            raise InvariantViolation(f"{where}.index", "must be >= 0")
        if not self.tool:
            raise InvariantViolation(f"{where}.tool", "must be a non-empty string")
        for name in ("params_length", "input_size", "output_size", "sensitive_hits"):
            if getattr(self, name) < 0:
                raise InvariantViolation(f"{where}.{name}", "must be >= 0")
        if not (math.isfinite(self.start_time) and math.isfinite(self.end_time)):
            raise InvariantViolation(f"{where}.start_time", "times must be finite")
        if self.start_time < 0:
            raise InvariantViolation(f"{where}.start_time", "must be >= 0")
        if not self.end_time > self.start_time:
            raise InvariantViolation(
                f"{where}.end_time",
                f"end_time {self.end_time} must exceed start_time {self.start_time}",
            )
        for d in self.depends_on:
            if not 0 <= d < self.index:
                raise InvariantViolation(
                    f"{where}.depends_on", f"dependency {d} is not an earlier step"
                )

    @property
    def duration(self) -> float:
        return self.end_time - self.start_time


@dataclass(frozen=True)
class TraceMetadata:
    trace_id: str
    model_id: str
    provider: str
    task_category: str
    label: str
    threat_model: str
    generator_seed: int

    def __post_init__(self) -> None:
        if not self.trace_id:
            raise InvariantViolation("metadata.trace_id", "must be non-empty")
        if self.model_id not in PROVIDERS:
            raise UnknownModelId(self.model_id)
        if self.provider != PROVIDERS[self.model_id]:
            raise InvariantViolation(
                "metadata.provider", f"{self.model_id} is served by {PROVIDERS[self.model_id]}"
            )
        if self.task_category not in TASK_CATEGORIES:
            raise InvariantViolation(
                "metadata.task_category", f"{self.task_category!r} not in {TASK_CATEGORIES}"
            )
        if self.label not in LABELS:
            raise InvariantViolation("metadata.label", f"{self.label!r} not in {LABELS}")
        if self.threat_model not in THREAT_MODELS:
            raise InvariantViolation(
                "metadata.threat_model", f"{self.threat_model!r} not in {THREAT_MODELS}"
            )
        if (self.threat_model == "none") != (self.label == "benign"):
            raise InvariantViolation(
                "metadata.threat_model", "must be 'none' exactly when label is 'benign'"
            )

    @property
    def is_backdoor(self) -> bool:
        return self.label == "backdoor"


@dataclass(frozen=True)
class ExecutionTrace:
    metadata: TraceMetadata
    steps: tuple[StepRecord, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "steps", tuple(self.steps))
        if not self.steps:
            raise InvariantViolation("steps", "a trace needs at least one step")
        for pos, step in enumerate(self.steps):
            if step.index != pos:
                raise InvariantViolation(
                    f"steps[{pos}].index", f"expected ordinal {pos}, got {step.index}"
                )
            if pos and step.start_time < self.steps[pos - 1].start_time:
                raise InvariantViolation(
                    f"steps[{pos}].start_time", "steps must be sorted by start_time"
                )

    @property
    def trace_id(self) -> str:
        return self.metadata.trace_id

    @property
    def model_id(self) -> str:
        return self.metadata.model_id

    @property
    def is_backdoor(self) -> bool:
        return self.metadata.is_backdoor

    @property
    def total_duration(self) -> float:
        return max(s.end_time for s in self.steps) - min(s.start_time for s in self.steps)


def steps_from_rows(rows: Iterable[dict[str, Any]]) -> tuple[StepRecord, ...]:
    """Build steps from loose dicts, re-sorting by (start_time, original order)
    and renumbering indices and dependencies to match."""
    rows = list(rows)
    order = sorted(range(len(rows)), key=lambda i: (round(rows[i]["start_time"], TIME_DECIMALS), i))
    new_index = {old: new for new, old in enumerate(order)}
    steps = []
    for new, old in enumerate(order):
        row = dict(rows[old])
        row["index"] = new
        row["depends_on"] = tuple(sorted(new_index[d] for d in row.get("depends_on", ())))
        steps.append(StepRecord(**row))
    return tuple(steps)


# serialization


def _fmt_time(t: float) -> str:
    return f"{t:.{TIME_DECIMALS}f}"


def _step_json(s: StepRecord) -> str:
    deps = ",".join(str(d) for d in s.depends_on)
    return (
        f'{{"index":{s.index},"tool":{json.dumps(s.tool)},'
        f'"params_length":{s.params_length},"input_size":{s.input_size},'
        f'"output_size":{s.output_size},"start_time":{_fmt_time(s.start_time)},'
        f'"end_time":{_fmt_time(s.end_time)},"depends_on":[{deps}],'
        f'"sensitive_hits":{s.sensitive_hits},'
        f'"unauthorized":{"true" if s.unauthorized else "false"}}}'
    )


def serialize_trace(trace: ExecutionTrace) -> str:
    m = trace.metadata
    meta = ",".join(
        f"{json.dumps(k)}:{json.dumps(getattr(m, k))}" for k in _METADATA_KEYS
    )
    steps = ",".join(_step_json(s) for s in trace.steps)
    return f'{{"metadata":{{{meta}}},"steps":[{steps}]}}'


def _expect(obj: dict, key: str, kinds: tuple[type, ...], where: str) -> Any:
    if key not in obj:
        raise MalformedSyntax(f"{where}: missing key {key!r}")
    value = obj[key]
    # bool is an int subclass; only accept it where bool is asked for
    if isinstance(value, bool) and bool not in kinds:
        raise MalformedSyntax(f"{where}.{key}: expected {kinds}, got bool")
    if not isinstance(value, kinds):
        raise MalformedSyntax(f"{where}.{key}: expected {kinds}, got {type(value).__name__}")
    return value


def trace_from_dict(obj: Any) -> ExecutionTrace:
    if not isinstance(obj, dict):
        raise MalformedSyntax("top level must be an object")
    meta_obj = obj.get("metadata")
    steps_obj = obj.get("steps")
    if not isinstance(meta_obj, dict):
        raise MalformedSyntax("missing or non-object 'metadata'")
    if not isinstance(steps_obj, list):
        raise MalformedSyntax("missing or non-array 'steps'")

    kinds = {k: (str,) for k in _METADATA_KEYS}
    kinds["generator_seed"] = (int,)
    meta = {k: _expect(meta_obj, k, kinds[k], "metadata") for k in _METADATA_KEYS}
    model_id = meta["model_id"]
    if model_id not in PROVIDERS:
        raise UnknownModelId(model_id)
    metadata = TraceMetadata(**meta)

    steps = []
    for pos, raw in enumerate(steps_obj):
        where = f"steps[{pos}]"
        if not isinstance(raw, dict):
            raise MalformedSyntax(f"{where}: must be an object")
        row = {}
        for k in ("index", "params_length", "input_size", "output_size", "sensitive_hits"):
            row[k] = _expect(raw, k, (int,), where)
        row["tool"] = _expect(raw, "tool", (str,), where)
        row["start_time"] = float(_expect(raw, "start_time", (int, float), where))
        row["end_time"] = float(_expect(raw, "end_time", (int, float), where))
        deps = _expect(raw, "depends_on", (list,), where)
        if not all(isinstance(d, int) and not isinstance(d, bool) for d in deps):
            raise MalformedSyntax(f"{where}.depends_on: entries must be integers")
        row["depends_on"] = tuple(deps)
        row["unauthorized"] = _expect(raw, "unauthorized", (bool,), where)
        steps.append(StepRecord(**row))
    return ExecutionTrace(metadata=metadata, steps=tuple(steps))


def parse_trace(text: str | bytes) -> ExecutionTrace:
    """Parse and fully re-validate one serialized trace."""
    try:
        obj = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedSyntax(f"invalid JSON: {exc}") from exc
    return trace_from_dict(obj)


# files


def trace_relpath(trace: ExecutionTrace) -> Path:
    return Path(trace.model_id) / f"{trace.trace_id}.json"


def write_trace(trace: ExecutionTrace, root: str | Path) -> Path:
    path = Path(root) / trace_relpath(trace)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(serialize_trace(trace) + "\n", encoding="utf-8")
    return path


def _read_file(path: Path) -> list[ExecutionTrace]:
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".jsonl":
        return [parse_trace(line) for line in text.splitlines() if line.strip()]
    return [parse_trace(text)]


def load_corpus(
    path: str | Path, strict: bool = False
) -> tuple[list[ExecutionTrace], list[tuple[Path, TraceError]]]:
    """Load every ``*.json`` / ``*.jsonl`` trace under ``path``.

    Returns ``(traces, errors)`` with traces sorted by trace_id. A file that
    fails to parse is recorded in ``errors`` and skipped; with ``strict=True``
    the collected errors are raised together as :class:`CorpusLoadError`.
    ``manifest.json`` files are not traces and are ignored.
    """
    root = Path(path)
    if not root.exists():
        raise IoFailure(f"corpus path does not exist: {root}")
    if root.is_file():
        files = [root]
    else:
        files = sorted(
            p
            for p in root.rglob("*")
            if p.is_file() and p.suffix in (".json", ".jsonl") and p.name != "manifest.json"
        )

    traces: list[ExecutionTrace] = []
    errors: list[tuple[Path, TraceError]] = []
    for f in files:
        try:
            traces.extend(_read_file(f))
        except TraceError as exc:
            logger.warning("skipping %s: %s", f, exc)
            errors.append((f, exc))
        except OSError as exc:
            raise IoFailure(f"cannot read {f}: {exc}") from exc
    if strict and errors:
        raise CorpusLoadError(errors)
    traces.sort(key=lambda t: t.trace_id)
    return traces, errors


def corpus_hash(traces: Sequence[ExecutionTrace]) -> str:
    """SHA-256 over the canonical serialization of traces in trace_id order."""
    h = hashlib.sha256()
    for t in sorted(traces, key=lambda t: t.trace_id):
        h.update(serialize_trace(t).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()
