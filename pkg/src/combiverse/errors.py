"""Exception hierarchy shared by every combiverse stage.

Each error carries the process exit code the command line reports for it:
0 success, 2 validation, 3 backend, 4 divergence, 1 anything else.
"""

from __future__ import annotations

import pathlib

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_VALIDATION = 2
EXIT_BACKEND = 3
EXIT_DIVERGENCE = 4


class CombiverseError(Exception):
    """Base class for all expected failures."""

    exit_code: int = EXIT_FAILURE


class ValidationError(CombiverseError, ValueError):
    """Input data violates a documented invariant."""

    exit_code = EXIT_VALIDATION


class ConfigurationError(ValidationError):
    """A configuration or scene document does not match its schema."""

    def __init__(self, field: str, message: str) -> None:
        self.field = field
        super().__init__(f"{field}: {message}")


class DegenerateSegmentationError(ValidationError):
    """A segmentation mask has no foreground pixel."""

    def __init__(self, message: str, index: int | None = None) -> None:
        self.index = index
        prefix = f"object {index}: " if index is not None else ""
        super().__init__(prefix + message)


class MeshValidationError(ValidationError):
    """A triangle mesh is empty or references missing vertices."""


class DecimationError(ValidationError):
    """Mesh simplification produced a degenerate result."""


class BackendError(CombiverseError):
    """An external backend failed after all retries."""

    exit_code = EXIT_BACKEND

    def __init__(self, stage: str, message: str, index: int | None = None) -> None:
        self.stage = stage
        self.index = index
        where = f"{stage}" if index is None else f"{stage} (object {index})"
        super().__init__(f"{where}: {message}")


class DivergenceError(CombiverseError):
    """The placement optimization produced a non-finite or exploding loss."""

    exit_code = EXIT_DIVERGENCE

    def __init__(
        self, message: str, iteration: int, checkpoint: pathlib.Path | None = None
    ) -> None:
        self.iteration = iteration
        self.checkpoint = checkpoint
        super().__init__(f"iteration {iteration}: {message}")


class ConformanceError(CombiverseError):
    """A score provider violates the attention-scaling contract."""

    exit_code = EXIT_VALIDATION

    def __init__(self, check: str, message: str) -> None:
        self.check = check
        super().__init__(f"check ({check}) failed: {message}")


class ExportError(CombiverseError):
    """Writing a composed mesh failed."""


class RunLockedError(CombiverseError):
    """Another process holds the run directory lock."""


__all__ = [
    "EXIT_BACKEND",
    "EXIT_DIVERGENCE",
    "EXIT_FAILURE",
    "EXIT_OK",
    "EXIT_VALIDATION",
    "BackendError",
    "CombiverseError",
    "ConfigurationError",
    "ConformanceError",
    "DecimationError",
    "DegenerateSegmentationError",
    "DivergenceError",
    "ExportError",
    "MeshValidationError",
    "RunLockedError",
    "ValidationError",
]
