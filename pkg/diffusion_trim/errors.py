"""
Exception hierarchy for the trimming estimator.

Every error carries a machine-readable payload (``to_dict``) and the exit
code the command-line front end returns for it.
"""

from typing import Any, Dict, Optional


class DiffusionError(Exception):
    """Base class for all errors raised by the package."""

    exit_code = 1

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> Dict[str, Any]:
        payload = {"error": type(self).__name__, "message": self.message}
        payload.update({k: v for k, v in self.details.items() if v is not None})
        return payload


class InputError(DiffusionError, ValueError):
    """Malformed input: dimension mismatch, parse error, asymmetric matrix, bad argument."""

    exit_code = 2


class InconsistentDataError(DiffusionError):
    """Observed data that has probability zero under the model for every scenario."""

    exit_code = 2

    def __init__(self, message: str, individual: Optional[int] = None,
                 period: Optional[int] = None, village: Optional[str] = None):
        super().__init__(message, individual=individual, period=period, village=village)
        self.individual = individual
        self.period = period
        self.village = village


class BudgetExceededError(DiffusionError):
    """Exact evaluation refused because the scenario count exceeds the budget."""

    exit_code = 3

    def __init__(self, message: str, estimate: int, limit: int, village: Optional[str] = None):
        super().__init__(message, estimate=estimate, limit=limit, village=village)
        self.estimate = estimate
        self.limit = limit
        self.village = village


class EstimationFailedError(DiffusionError):
    """Every grid point has log-likelihood -inf."""

    def __init__(self, message: str, village: Optional[str] = None):
        super().__init__(message, village=village)
        self.village = village


class InsufficientDataError(DiffusionError):
    """Not enough points to compute a diagnostic."""


class TrimmingDeadEndError(EstimationFailedError):
    """Trimming removed every branch with positive probability at every grid point."""

    def __init__(self, message: str, d: Optional[int] = None, village: Optional[str] = None):
        super().__init__(message, village=village)
        self.details["d"] = d
        self.d = d
