"""Semantic exception hierarchy shared by every corrtune module.

Public functions never raise bare ``ValueError``; callers can catch
``CorrtuneError`` for anything originating here, or the specific class
when they need to distinguish usage bugs from numeric degeneracy.
"""


class CorrtuneError(Exception):
    """Base class for all corrtune errors."""


class InvalidInput(CorrtuneError, ValueError):
    """Inputs violate a contract: shape, domain, emptiness, non-finite."""


class DegenerateInput(CorrtuneError):
    """Inputs are structurally valid but statistically degenerate
    (zero variance, zero-norm embedding, constant predictions)."""


class ParseError(CorrtuneError):
    """A data file could not be parsed; message carries file and line."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(prefix + message)


class CheckpointError(CorrtuneError):
    """Checkpoint bytes are truncated, corrupted, or of a wrong version."""


class TrainingDiverged(CorrtuneError):
    """A training step produced non-finite loss, gradients, or parameters."""


class GenerationError(CorrtuneError):
    """Synthetic dataset generation could not satisfy the configuration."""
