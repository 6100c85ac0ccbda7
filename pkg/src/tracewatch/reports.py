"""Report tables for an experiment run: CSV files plus aligned-text copies.

Every table starts with a ``# corpus_hash: ...`` comment line. Files are
written atomically and contain nothing run-dependent besides the results, so
the same results always give byte-identical reports.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path

from tracewatch import __version__
from tracewatch.classifiers.metrics import EvalMetrics
from tracewatch.classifiers.persist import atomic_write_text
from tracewatch.features import CATEGORY, FEATURE_NAMES
from tracewatch.harness import ExperimentResult

Table = tuple[list[str], list[list[object]]]


def _fmt(value: object, blank: str = "") -> str:
    if value is None:
        return blank
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def render_csv(table: Table, corpus_hash: str) -> str:
    header, rows = table
    buf = io.StringIO()
    buf.write(f"# corpus_hash: {corpus_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def render_text(table: Table, corpus_hash: str, title: str) -> str:
    header, rows = table
    cells = [list(header)] + [[_fmt(v, "-") for v in row] for row in rows]
    widths = [max(len(r[j]) for r in cells) for j in range(len(header))]
    lines = [f"# {title}", f"# corpus_hash: {corpus_hash}"]
    for i, r in enumerate(cells):
        lines.append("  ".join(c.ljust(w) if j == 0 else c.rjust(w) for j, (c, w) in enumerate(zip(r, widths))).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


# tables


def dataset_table(res: ExperimentResult) -> Table:
    header = ["model_id", "benign", "backdoor", "tm1", "tm2", "total", "train", "test"]
    rows = [[m] + [d[k] for k in header[1:]] for m, d in res.dataset.items()]
    rows.append(["TOTAL"] + [sum(d[k] for d in res.dataset.values()) for k in header[1:]])
    return header, rows


def matrix_table(res: ExperimentResult) -> Table:
    m = res.matrix
    header = ["train \\ test"] + list(m.models)
    rows = [[a] + [m.accuracy(a, b) for b in m.models] for a in m.models]
    return header, rows


def matrix_summary(res: ExperimentResult) -> Table:
    m = res.matrix
    return ["statistic", "value"], [
        ["diagonal_mean", m.diagonal_mean],
        ["off_diagonal_mean", m.off_diagonal_mean],
        ["gap", m.gap],
    ]


def strategies_table(res: ExperimentResult) -> Table:
    header = ["strategy", "same_model_acc", "cross_model_acc", "overall_acc", "gap"]
    rows = [
        [s.strategy, s.same_model_acc, s.cross_model_acc, s.overall_acc, s.gap]
        for s in res.strategies.values()
    ]
    return header, rows


def _metrics_row(label: str, e: EvalMetrics) -> list[object]:
    return [label, e.accuracy, e.precision, e.recall, e.f1, e.auc_roc, e.tp, e.fp, e.tn, e.fn]


def precision_recall_table(res: ExperimentResult) -> Table:
    """Per-test-model metrics of the model-aware detector on the pooled test
    union (single-model diagonal cells when model-aware was not run)."""
    header = ["model_id", "accuracy", "precision", "recall", "f1", "auc_roc", "tp", "fp", "tn", "fn"]
    src = res.strategies.get("model_aware") or res.strategies.get("single")
    if src is None:
        per_model = {m: res.matrix.cells[(m, m)] for m in res.matrix.models}
        pooled = None
    else:
        per_model, pooled = src.per_model, src.pooled
    rows = [_metrics_row(m, e) for m, e in per_model.items()]
    if pooled is not None:
        rows.append(_metrics_row("ALL", pooled))
    return header, rows


def stability_table(res: ExperimentResult) -> Table:
    st = res.stability
    header = ["feature", "category"] + [f"mean[{m}]" for m in st.models] + ["cv", "band"]
    rows = []
    for j, name in enumerate(FEATURE_NAMES):
        rows.append([name, CATEGORY[name]] + [float(v) for v in st.model_means[:, j]] + [st.cv[j], st.band(name)])
    return header, rows


def stability_rollup_table(res: ExperimentResult) -> Table:
    header = ["category", "total", "stable", "moderate", "unstable", "undefined"]
    return header, [[c] + [d[k] for k in header[1:]] for c, d in res.stability.rollup().items()]


def cohens_d_table(res: ExperimentResult) -> Table:
    st = res.stability
    header = ["feature"] + list(st.models)
    rows = [[name] + [st.cohens_d[m][j] for m in st.models] for j, name in enumerate(FEATURE_NAMES)]
    return header, rows


def discriminative_table(res: ExperimentResult) -> Table:
    st = res.stability
    rows = []
    for m in st.models:
        top = st.top_discriminative(m)
        rows.append([m, top[0] if top else None, top[1] if top else None])
    return ["model_id", "top_feature", "cohens_d"], rows


# emission


def _tables(res: ExperimentResult) -> list[tuple[str, str, Table]]:
    out = [
        ("dataset", "Dataset summary", dataset_table(res)),
        ("matrix", "Cross-model detection accuracy (rows train, columns test)", matrix_table(res)),
        ("matrix_summary", "Detection matrix summary", matrix_summary(res)),
        ("precision_recall", "Per-model precision and recall", precision_recall_table(res)),
    ]
    if res.strategies:
        out.append(("strategies", "Strategy comparison", strategies_table(res)))
    if res.stability is not None:
        out += [
            ("stability", "Cross-model feature stability", stability_table(res)),
            ("stability_rollup", "Stability by category", stability_rollup_table(res)),
            ("cohens_d", "Cohen's d (backdoor vs benign) per model", cohens_d_table(res)),
            ("discriminative", "Most discriminative feature per model", discriminative_table(res)),
        ]
    return out


def render_reports(res: ExperimentResult) -> dict[str, str]:
    """File name -> content for every report of ``res``, manifest included."""
    files: dict[str, str] = {}
    for stem, title, table in _tables(res):
        files[f"{stem}.csv"] = render_csv(table, res.corpus_hash)
        files[f"{stem}.txt"] = render_text(table, res.corpus_hash, title)
    digests = {name: hashlib.sha256(text.encode()).hexdigest() for name, text in sorted(files.items())}
    results_hash = hashlib.sha256(
        "".join(f"{n}:{d}\n" for n, d in digests.items()).encode()
    ).hexdigest()
    m = res.matrix
    manifest = {
        "tool": "tracewatch",
        "version": __version__,
        "seed": res.seed,
        "classifier": res.classifier,
        "corpus_hash": res.corpus_hash,
        "models": list(m.models),
        "strategies": list(res.strategies),
        "summary": {
            "diagonal_mean": m.diagonal_mean,
            "off_diagonal_mean": m.off_diagonal_mean,
            "gap": m.gap,
            "strategy_overall_acc": {k: v.overall_acc for k, v in res.strategies.items()},
        },
        "files": digests,
        "results_hash": results_hash,
    }
    files["manifest.json"] = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    return files


def emit_reports(res: ExperimentResult, outdir: str | Path) -> dict[str, Path]:
    outdir = Path(outdir)
    written = {}
    for name, text in render_reports(res).items():
        path = outdir / name
        atomic_write_text(path, text)
        written[name] = path
    return written


def read_table(path: str | Path) -> tuple[str, list[str], list[list[str]]]:
    """Parse a report CSV back into (corpus_hash, header, rows)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("# corpus_hash: "):
        raise ValueError(f"{path}: missing corpus hash line")
    rows = list(csv.reader(lines[1:]))
    return lines[0].split(": ", 1)[1], rows[0], rows[1:]

