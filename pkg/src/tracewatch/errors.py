"""Exception hierarchy shared by every stage of the pipeline.

Each error carries an ``exit_code`` so the CLI can map failures onto its
stable scripting contract (2 config, 3 generation, 4 modeling, 5 I/O).
"""

from __future__ import annotations


class TracewatchError(Exception):
    exit_code = 1


class ConfigError(TracewatchError):
    exit_code = 2


class GenerationError(TracewatchError):
    exit_code = 3


class ModelingError(TracewatchError):
    exit_code = 4


class IoFailure(TracewatchError, OSError):
    exit_code = 5


# trace model


class TraceError(TracewatchError, ValueError):
    exit_code = 2


class MalformedSyntax(TraceError):
    pass


class InvariantViolation(TraceError):
    def __init__(self, field: str, reason: str) -> None:
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


class UnknownModelId(TraceError):
    def __init__(self, model_id: object) -> None:
        super().__init__(f"unknown model_id {model_id!r}")
        self.model_id = model_id


class CorpusLoadError(TraceError):
    """Raised by strict corpus loads; ``errors`` holds ``(path, exception)`` pairs."""

    def __init__(self, errors: list) -> None:
        names = ", ".join(str(p) for p, _ in errors)
        super().__init__(f"{len(errors)} file(s) failed to load: {names}")
        self.errors = errors


# generation


class TargetsBelowBenignMean(ConfigError):
    pass


class InsufficientBenignStats(GenerationError):
    pass


class ValidationExhausted(GenerationError):
    pass


# features / modeling


class InsufficientData(ModelingError):
    pass


class DimensionMismatch(ModelingError):
    pass


class DegenerateLabels(ModelingError):
    pass


class NonFiniteInput(ModelingError):
    pass


class SingleClassAuc(ModelingError):
    pass


class MalformedModel(ModelingError):
    pass


class VersionMismatch(MalformedModel):
    pass


class FingerprintMismatch(ModelingError):
    pass


# harness


class InsufficientClassSamples(ModelingError):
    pass


class InsufficientModels(ModelingError):
    pass


class CellError(ModelingError):
    """A training/evaluation failure annotated with its matrix coordinates."""

    def __init__(self, train_model: str, test_model: str | None, cause: Exception) -> None:
        where = train_model if test_model is None else f"{train_model} -> {test_model}"
        super().__init__(f"[{where}] {cause}")
        self.train_model = train_model
        self.test_model = test_model
        self.cause = cause
