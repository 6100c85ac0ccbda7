"""Versioned JSON container for fitted classifiers and detectors.

Layout::

    {"format": "tracewatch-model", "version": 1, "kind": "forest" | "svm",
     "feature_names": [...], "fingerprint": "<sha256 of names>",
     "model": {...}, "extra": {...}}

Floats are written with ``repr`` precision, so a load reproduces the exact
parameters. ``extra`` carries whatever the caller attached (the detector
stores its standardizer, reference bigrams and provenance there).
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Sequence

from tracewatch.classifiers.forest import ForestModel
from tracewatch.classifiers.svm import SvmModel
from tracewatch.errors import (
    DimensionMismatch,
    FingerprintMismatch,
    IoFailure,
    MalformedModel,
    VersionMismatch,
)

FORMAT = "tracewatch-model"
VERSION = 1
_KINDS = {"forest": ForestModel, "svm": SvmModel}


def feature_fingerprint(names: Sequence[str]) -> str:
    return hashlib.sha256("\n".join(names).encode("utf-8")).hexdigest()


def model_to_json(model, feature_names: Sequence[str], extra: dict | None = None) -> str:
    if len(feature_names) != model.n_features:
        raise DimensionMismatch(
            f"{len(feature_names)} feature names for a {model.n_features}-feature model"
        )
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "kind": model.kind,
        "feature_names": list(feature_names),
        "fingerprint": feature_fingerprint(feature_names),
        "model": model.to_dict(),
        "extra": extra or {},
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def model_from_json(text: str, expected_features: Sequence[str] | None = None):
    """Return ``(model, feature_names, extra)``."""
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedModel(f"model file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise MalformedModel("not a tracewatch model file")
    if doc.get("version") != VERSION:
        raise VersionMismatch(f"model format version {doc.get('version')!r}, expected {VERSION}")
    try:
        names = list(doc["feature_names"])
        if feature_fingerprint(names) != doc["fingerprint"]:
            raise MalformedModel("feature fingerprint does not match the stored names")
        model = _KINDS[doc["kind"]].from_dict(doc["model"])
        extra = doc.get("extra", {})
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedModel(f"incomplete model file: {exc}") from exc
    if model.n_features != len(names):
        raise MalformedModel("model width disagrees with its feature names")
    if expected_features is not None and feature_fingerprint(expected_features) != doc["fingerprint"]:
        raise FingerprintMismatch("model was trained on a different feature order")
    return model, names, extra


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write via a temp file in the same directory and rename over ``path``."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def save_model(model, path: str | Path, feature_names: Sequence[str], extra: dict | None = None) -> None:
    atomic_write_text(path, model_to_json(model, feature_names, extra))


def load_model(path: str | Path, expected_features: Sequence[str] | None = None):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise IoFailure(f"model file not found: {path}") from exc
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return model_from_json(text, expected_features)
