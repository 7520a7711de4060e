"""Exception hierarchy.

Each class maps to one CLI exit code, so callers can tell a bad flag from
bad data from a numerical breakdown.
"""

from __future__ import annotations


class DNBCureError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class UsageError(DNBCureError, ValueError):
    """Invalid arguments: mismatched dimensions, bad option values."""

    exit_code = 2


class DomainError(DNBCureError, ValueError):
    """Parameter values outside the model's domain."""

    exit_code = 2


class DataError(DNBCureError, ValueError):
    """Malformed input data (nonpositive times, non-binary status, ...)."""

    exit_code = 3

    def __init__(self, message: str, rows: list[int] | None = None):
        if rows:
            shown = ", ".join(str(r) for r in rows[:10])
            more = "" if len(rows) <= 10 else f" (+{len(rows) - 10} more)"
            message = f"{message} [rows: {shown}{more}]"
        super().__init__(message)
        self.rows = list(rows or [])


class NumericalError(DNBCureError, ArithmeticError):
    """Non-finite values encountered during optimization."""

    exit_code = 4

    def __init__(self, message: str, iteration: int | None = None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class ConfigurationError(DNBCureError, ValueError):
    """Simulation or optimizer configuration that cannot be satisfied."""

    exit_code = 2


class InferenceError(DNBCureError, RuntimeError):
    """Bootstrap could not produce any usable resample."""

    exit_code = 4


class NotAscentDirection(DNBCureError, ValueError):
    """Raised by the line search when ``d . g <= 0``."""

    exit_code = 4
