"""Exception hierarchy and the process exit codes the CLI maps it to."""

from __future__ import annotations

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


class LabError(Exception):
    """Base class for every error this package raises deliberately."""

    exit_code = EXIT_RUNTIME


class InputError(LabError, ValueError):
    """A caller-supplied value violates an operation's preconditions."""

    exit_code = EXIT_CONFIG


class ConfigError(LabError):
    """An experiment configuration is malformed or inconsistent."""

    exit_code = EXIT_CONFIG


class ConflictError(LabError):
    """Artifacts on disk do not match the requested configuration."""

    exit_code = EXIT_CONFIG


class FormatError(LabError):
    """A file does not match its declared on-disk format."""

    exit_code = EXIT_DATA


class NumericError(LabError):
    """A numeric contract was violated (NaN/Inf where finite is required)."""


class UsageError(LabError):
    """An API was invoked in an unsupported way."""


class CoverageError(LabError):
    """A sample lacks enough IN or OUT shadow models to fit statistics."""


class TrainingError(LabError):
    """Training diverged or failed; carries the epoch/step it happened at."""

    def __init__(self, message: str, epoch: int | None = None, step: int | None = None):
        where = ""
        if epoch is not None:
            where = f" (epoch {epoch}" + (f", step {step}" if step is not None else "") + ")"
        super().__init__(message + where)
        self.epoch = epoch
        self.step = step
