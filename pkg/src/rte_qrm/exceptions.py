"""Exceptions for the radiative transfer inverse source solver.

The command-line front end maps each exception class onto a process exit
code, so the distinction between exceptions matters both for error reporting
and for scripts driving the solver.
"""

from __future__ import annotations

from enum import IntEnum

from traitlets import TraitError

__all__ = [
    "ConfigError",
    "ConvergenceError",
    "ExitCode",
    "IllConditionedBasisError",
    "NotPositiveDefiniteError",
    "OutputError",
    "PreconditionError",
    "StageError",
    "exit_code_for",
]


class ExitCode(IntEnum):
    """Process exit codes of the ``rte-qrm`` command."""

    SUCCESS = 0
    CONFIG = 2
    NUMERICAL = 3
    IO = 4


class ConfigError(Exception):
    """The run configuration is invalid.

    Parameters
    ----------
    message
        Human-readable description of the problem.
    parameter
        Dotted name of the offending option, if known.
    constraint
        The violated constraint, such as ``1 < a``.
    """

    def __init__(
        self,
        message: str,
        *,
        parameter: str | None = None,
        constraint: str | None = None,
    ) -> None:
        self.message = message
        self.parameter = parameter
        self.constraint = constraint
        super().__init__(message)

    def __str__(self) -> str:
        result = self.message
        if self.constraint:
            result += f" (constraint: {self.constraint})"
        return result


class PreconditionError(ValueError):
    """An operation was called with inputs outside its domain."""


class ConvergenceError(Exception):
    """An iterative solver did not reach its tolerance.

    Parameters
    ----------
    message
        Human-readable description of the failure.
    iterations
        Number of iterations performed.
    residual
        Last residual measured.
    tolerance
        Tolerance that was requested.
    """

    def __init__(
        self,
        message: str,
        *,
        iterations: int,
        residual: float,
        tolerance: float,
    ) -> None:
        self.message = message
        self.iterations = iterations
        self.residual = residual
        self.tolerance = tolerance
        super().__init__(message)

    def __str__(self) -> str:
        return (
            f"{self.message}: residual {self.residual:.3e} after"
            f" {self.iterations} iterations (tolerance {self.tolerance:.1e})"
        )


class NotPositiveDefiniteError(Exception):
    """The regularized normal operator is not symmetric positive definite."""


class IllConditionedBasisError(Exception):
    """Gram-Schmidt lost linear independence of the raw basis functions."""


class OutputError(Exception):
    """Failure to read or write an artifact.

    Parameters
    ----------
    message
        Exception string value.
    path
        File that could not be accessed.
    """

    @classmethod
    def from_exception(cls, exc: OSError, path: str) -> OutputError:
        """Create an exception from an `OSError`.

        Parameters
        ----------
        exc
            Exception raised by the file operation.
        path
            Path that was being accessed.

        Returns
        -------
        OutputError
            Newly-constructed exception.
        """
        reason = exc.strerror or type(exc).__name__
        return cls(f"Cannot access {path}: {reason}", path=path)

    def __init__(self, message: str, *, path: str | None = None) -> None:
        self.message = message
        self.path = path
        super().__init__(message)


class StageError(Exception):
    """A pipeline stage failed.

    Parameters
    ----------
    message
        Exception string value, naming the stage.
    stage
        Name of the failing stage.
    cause
        Original exception.
    """

    @classmethod
    def from_exception(cls, stage: str, exc: Exception) -> StageError:
        """Wrap an exception raised while running a stage.

        Parameters
        ----------
        stage
            Name of the failing stage.
        exc
            Exception raised by the stage.

        Returns
        -------
        StageError
            Newly-constructed exception.
        """
        message = f"Stage {stage} failed: {type(exc).__name__}: {exc!s}"
        return cls(message, stage=stage, cause=exc)

    def __init__(self, message: str, *, stage: str, cause: Exception) -> None:
        self.message = message
        self.stage = stage
        self.cause = cause
        super().__init__(message)

    @property
    def exit_code(self) -> ExitCode:
        """Exit code of the underlying failure."""
        return exit_code_for(self.cause)


def exit_code_for(exc: BaseException) -> ExitCode:
    """Map an exception onto the exit code reported by the command line.

    Parameters
    ----------
    exc
        Exception that ended the run.

    Returns
    -------
    ExitCode
        Configuration errors and rejected inputs give `ExitCode.CONFIG`, I/O
        failures `ExitCode.IO`, and everything else is treated as a numerical
        failure.
    """
    if isinstance(exc, StageError):
        return exc.exit_code
    if isinstance(exc, ConfigError | PreconditionError | TraitError):
        return ExitCode.CONFIG
    if isinstance(exc, OutputError | OSError):
        return ExitCode.IO
    return ExitCode.NUMERICAL
