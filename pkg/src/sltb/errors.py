"""Exception hierarchy shared across the toolkit.

Callers can distinguish bad inputs (DomainError, ValidationError), the
specific boundary failure of the plain beta likelihood (BoundaryError),
and numerical breakdown during fitting or sampling (NumericalError,
ConvergenceError).
"""

from __future__ import annotations


class SltbError(Exception):
    """Base class for all toolkit errors."""


class DomainError(SltbError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ValidationError(SltbError, ValueError):
    """Malformed user input: bad config, bad CSV, inconsistent spec."""


class BoundaryError(DomainError):
    """A beta-family operation was handed an exact 0 or 1 response.

    Carries the offending row indices when raised by a likelihood over a
    dataset, so error messages can cite the rows.
    """

    def __init__(self, message: str, rows: tuple[int, ...] = ()):
        super().__init__(message)
        self.rows = tuple(rows)


class NumericalError(SltbError, ArithmeticError):
    """A computation produced non-finite values or a singular system."""


class ConvergenceError(NumericalError):
    """An iterative fit failed to converge; carries the best point found."""

    def __init__(self, message: str, best_point=None, best_value=None):
        super().__init__(message)
        self.best_point = best_point
        self.best_value = best_value
