"""Command-line entry point: ``tracewatch <generate|extract|train|score|experiment>``.

Settings resolve in increasing priority: built-in defaults, a JSON file given
with ``--config``, ``TRACEWATCH_<NAME>`` environment variables, then flags.
Exit codes: 0 ok, 2 config, 3 generation, 4 modeling, 5 I/O.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from tracewatch import __version__
from tracewatch.classifiers import CLASSIFIERS
from tracewatch.classifiers.persist import atomic_write_text
from tracewatch.detector import TrainedDetector, fit_detector
from tracewatch.errors import ConfigError, IoFailure, TracewatchError
from tracewatch.features import extract_matrix, feature_names, reference_bigrams
from tracewatch.harness import STRATEGIES, ExperimentData, make_splits, run_experiment
from tracewatch.reports import emit_reports
from tracewatch.synth import (
    CorpusSpec,
    build_corpus,
    generate_corpus,
    load_attack_config,
    load_corpus_spec,
    load_profiles,
)
from tracewatch.trace import MODEL_IDS, ExecutionTrace, corpus_hash, load_corpus

ENV_PREFIX = "TRACEWATCH_"

DEFAULTS = {
    "corpus": None,
    "out": None,
    "seed": 42,
    "classifier": "forest",
    "strategies": ",".join(STRATEGIES),
    "per_model": None,
    "profiles": None,
    "attack_config": None,
    "corpus_spec": None,
    "model_aware": False,
    "models": None,
    "train_split": False,
    "strict": False,
}
_INT = {"seed", "per_model"}
_BOOL = {"model_aware", "train_split", "strict"}


@dataclasses.dataclass(frozen=True)
class RunConfig:
    command: str
    corpus: str | None
    out: str | None
    seed: int
    classifier: str
    strategies: tuple[str, ...]
    per_model: int | None
    profiles: str | None
    attack_config: str | None
    corpus_spec: str | None
    model_aware: bool
    models: tuple[str, ...] | None
    train_split: bool
    strict: bool
    model_file: str | None = None


def _coerce(key: str, value):
    if value is None:
        return None
    try:
        if key in _INT:
            return int(value)
        if key in _BOOL:
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off", ""):
                return False
            raise ValueError(f"not a boolean: {value!r}")
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc
    return str(value)


def _split_list(text: str | None) -> tuple[str, ...] | None:
    if text is None:
        return None
    return tuple(s.strip() for s in str(text).split(",") if s.strip())


def resolve_config(args: argparse.Namespace, environ: dict | None = None) -> RunConfig:
    environ = os.environ if environ is None else environ
    values = dict(DEFAULTS)
    if args.config:
        path = Path(args.config)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        unknown = sorted(set(k.replace("-", "_") for k in data) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"{path}: unknown keys {unknown}")
        values.update({k.replace("-", "_"): v for k, v in data.items()})
    for key in DEFAULTS:
        env = environ.get(ENV_PREFIX + key.upper())
        if env is not None:
            values[key] = env
    for key in DEFAULTS:
        flag = getattr(args, key, None)
        if flag is not None and flag is not False:
            values[key] = flag
    values = {k: _coerce(k, v) for k, v in values.items()}

    if values["classifier"] not in CLASSIFIERS:
        raise ConfigError(f"unknown classifier {values['classifier']!r}; choose from {sorted(CLASSIFIERS)}")
    strategies = _split_list(values["strategies"]) or ()
    bad = [s for s in strategies if s not in STRATEGIES]
    if bad or not strategies:
        raise ConfigError(f"unknown strategies {bad}; choose from {list(STRATEGIES)}")
    models = _split_list(values["models"])
    if models:
        bad = [m for m in models if m not in MODEL_IDS]
        if bad:
            raise ConfigError(f"unknown model ids {bad}")
    if values["per_model"] is not None and values["per_model"] < 1:
        raise ConfigError("per_model must be >= 1")
    for key in ("profiles", "attack_config", "corpus_spec"):
        if values[key] is not None and not Path(values[key]).is_file():
            raise ConfigError(f"{key.replace('_', '-')} file not found: {values[key]}")
    if values["corpus"] is not None and not Path(values["corpus"]).exists():
        raise ConfigError(f"corpus path not found: {values['corpus']}")
    return RunConfig(
        command=args.command,
        corpus=values["corpus"],
        out=values["out"],
        seed=values["seed"],
        classifier=values["classifier"],
        strategies=tuple(s for s in STRATEGIES if s in strategies),
        per_model=values["per_model"],
        profiles=values["profiles"],
        attack_config=values["attack_config"],
        corpus_spec=values["corpus_spec"],
        model_aware=values["model_aware"],
        models=models or None,
        train_split=values["train_split"],
        strict=values["strict"],
        model_file=getattr(args, "model_file", None),
    )


# helpers


def _require(cfg: RunConfig, key: str) -> str:
    value = getattr(cfg, key)
    if not value:
        raise ConfigError(f"{cfg.command} needs --{key.replace('_', '-')}")
    return value


def _corpus_spec(cfg: RunConfig) -> CorpusSpec:
    if cfg.per_model is not None:
        base = load_corpus_spec(cfg.corpus_spec)
        return CorpusSpec.uniform(cfg.per_model, cfg.seed, base.tm1_fraction, tuple(base.per_model))
    return dataclasses.replace(load_corpus_spec(cfg.corpus_spec), master_seed=cfg.seed)


def _load_traces(cfg: RunConfig) -> list[ExecutionTrace]:
    traces, errors = load_corpus(_require(cfg, "corpus"), strict=cfg.strict)
    for path, exc in errors:
        print(f"warning: skipped {path}: {exc}", file=sys.stderr)
    if cfg.models:
        traces = [t for t in traces if t.model_id in cfg.models]
    if not traces:
        raise ConfigError(f"no traces found in {cfg.corpus}")
    return traces


def _experiment_traces(cfg: RunConfig) -> list[ExecutionTrace]:
    if cfg.corpus:
        return _load_traces(cfg)
    profiles = load_profiles(cfg.profiles)
    attack = load_attack_config(cfg.attack_config)
    traces = build_corpus(_corpus_spec(cfg), profiles, attack).traces
    if cfg.models:
        traces = [t for t in traces if t.model_id in cfg.models]
    return traces


# subcommands


def cmd_generate(cfg: RunConfig) -> int:
    out = _require(cfg, "out")
    profiles = load_profiles(cfg.profiles)
    attack = load_attack_config(cfg.attack_config)
    manifest = generate_corpus(_corpus_spec(cfg), out, profiles, attack)
    print(f"{'model_id':20s} {'benign':>7s} {'backdoor':>9s} {'total':>6s} {'retries':>8s}")
    for m, d in manifest["per_model"].items():
        print(f"{m:20s} {d['benign']:7d} {d['backdoor']:9d} {d['total']:6d} {d['validation_retries']:8d}")
    tot = manifest["totals"]
    print(f"{'TOTAL':20s} {tot['benign']:7d} {tot['backdoor']:9d} {tot['traces']:6d}")
    print(f"seed {cfg.seed}  corpus_hash {manifest['corpus_hash']}")
    return 0


def cmd_extract(cfg: RunConfig) -> int:
    traces = _load_traces(cfg)
    reference = reference_bigrams(t for t in traces if not t.is_backdoor)
    X = extract_matrix(traces, reference, model_aware=cfg.model_aware)
    buf = io.StringIO()
    buf.write(f"# corpus_hash: {corpus_hash(traces)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trace_id", "model_id", "label", "threat_model", *feature_names(cfg.model_aware)])
    for t, row in zip(traces, X):
        w.writerow([t.trace_id, t.model_id, t.metadata.label, t.metadata.threat_model,
                    *(repr(float(v)) for v in row)])
    if cfg.out:
        atomic_write_text(cfg.out, buf.getvalue())
        print(f"wrote {len(traces)} rows x {X.shape[1]} features to {cfg.out}")
    else:
        sys.stdout.write(buf.getvalue())
    return 0


def cmd_train(cfg: RunConfig) -> int:
    out = _require(cfg, "out")
    traces = _load_traces(cfg)
    if cfg.train_split:
        plan = make_splits(traces, cfg.seed)
        keep = set(plan.train_ids())
        traces = [t for t in traces if t.trace_id in keep]
    strategy = "model_aware" if cfg.model_aware else ("single" if len({t.model_id for t in traces}) == 1 else "pooled")
    det = fit_detector(traces, cfg.classifier, cfg.seed, model_aware=cfg.model_aware, strategy=strategy)
    det.save(out)
    print(f"trained {det.kind} on {len(traces)} traces ({', '.join(det.source_models)}); "
          f"{len(det.feature_names)} features; seed {cfg.seed}; saved to {out}")
    return 0


def cmd_score(cfg: RunConfig) -> int:
    det = TrainedDetector.load(cfg.model_file)
    traces = _load_traces(cfg)
    scores = det.score_traces(traces)
    for t, s in zip(traces, scores):
        label = "backdoor" if s > det.threshold else "benign"
        print(f"{t.trace_id}\t{s:.6f}\t{label}")
    return 0


def cmd_experiment(cfg: RunConfig) -> int:
    out = _require(cfg, "out")
    traces = _experiment_traces(cfg)
    res = run_experiment(ExperimentData(traces), cfg.seed, cfg.classifier, cfg.strategies)
    emit_reports(res, out)
    m = res.matrix
    gap = "absent" if m.gap is None else f"{m.gap:.4f}"
    print(f"diagonal {m.diagonal_mean:.4f}  off-diagonal "
          f"{'absent' if m.off_diagonal_mean is None else f'{m.off_diagonal_mean:.4f}'}  gap {gap}")
    for s in res.strategies.values():
        print(f"  {s.strategy:12s} overall {s.overall_acc:.4f}")
    print(f"seed {cfg.seed}  corpus_hash {res.corpus_hash}  reports in {out}")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "extract": cmd_extract,
    "train": cmd_train,
    "score": cmd_score,
    "experiment": cmd_experiment,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of settings (keys as flag names)")
    common.add_argument("--seed", type=int, help="master seed (default 42)")
    common.add_argument("-v", "--verbose", action="store_true")

    corpus = argparse.ArgumentParser(add_help=False)
    corpus.add_argument("--corpus", help="corpus directory or trace file")
    corpus.add_argument("--models", help="comma-separated model ids to keep")
    corpus.add_argument("--strict", action="store_true", default=None,
                        help="fail on any unreadable trace file")

    gen = argparse.ArgumentParser(add_help=False)
    gen.add_argument("--per-model", type=int, help="benign and backdoor traces per model")
    gen.add_argument("--profiles", help="model profile JSON")
    gen.add_argument("--attack-config", help="attack config JSON")
    gen.add_argument("--corpus-spec", help="corpus spec JSON")

    clf = argparse.ArgumentParser(add_help=False)
    clf.add_argument("--classifier", choices=sorted(CLASSIFIERS))

    p = argparse.ArgumentParser(
        prog="tracewatch",
        description="Generate agent execution traces and measure how backdoor detectors transfer across models.",
    )
    p.add_argument("--version", action="version", version=f"tracewatch {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("generate", parents=[common, gen], help="write a synthetic corpus")
    s.add_argument("--out", help="output corpus directory")

    s = sub.add_parser("extract", parents=[common, corpus], help="write the feature matrix as CSV")
    s.add_argument("--out", help="CSV path (stdout when omitted)")
    s.add_argument("--model-aware", action="store_true", default=None, help="append the model code column")

    s = sub.add_parser("train", parents=[common, corpus, clf], help="train and save a detector")
    s.add_argument("--out", help="model file path")
    s.add_argument("--model-aware", action="store_true", default=None)
    s.add_argument("--train-split", action="store_true", default=None,
                   help="train on the seeded 80%% split only")

    s = sub.add_parser("score", parents=[common, corpus], help="score traces with a saved detector")
    s.add_argument("model_file", help="model file written by train")

    s = sub.add_parser("experiment", parents=[common, corpus, gen, clf], help="run the full cross-model study")
    s.add_argument("--out", help="report directory")
    s.add_argument("--strategies", help=f"comma-separated subset of {','.join(STRATEGIES)}")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = resolve_config(args)
        return COMMANDS[cfg.command](cfg)
    except TracewatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {IoFailure(str(exc))}", file=sys.stderr)
        return IoFailure.exit_code


if __name__ == "__main__":
    sys.exit(main())
