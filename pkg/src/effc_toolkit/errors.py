"""
Exception hierarchy for the toolkit
Every error raised on purpose by the package derives from EffcError
"""

from typing import Dict, Optional


class EffcError(Exception):
    """Base class for toolkit errors"""

    kind = "effc_error"

    def to_dict(self) -> Dict[str, object]:
        """Machine-readable form used by the CLI error document"""
        return {"error": self.kind, "message": str(self)}


class DomainError(EffcError, ValueError):
    """An argument lies outside the range an operation is defined on"""

    kind = "domain_error"


class RegimeError(DomainError):
    """The operation only exists in the subcritical regime 0 < theta < 1"""

    kind = "regime_error"


class NumericalError(EffcError, ArithmeticError):
    """A linear solve or special-function evaluation failed"""

    kind = "numerical_error"

    def __init__(self, message: str, condition: Optional[Dict[str, float]] = None):
        """
        Initialize the error

        Args:
            message: What failed
            condition: Diagnostic numbers (pivots, residuals) describing the failure
        """
        super().__init__(message)
        self.condition = dict(condition or {})

    def to_dict(self) -> Dict[str, object]:
        data = super().to_dict()
        data["condition"] = self.condition
        return data


class InvariantViolation(EffcError, AssertionError):
    """A partition, trajectory or excursion broke one of its structural invariants"""

    kind = "invariant_violation"


class AcceptanceFailure(EffcError):
    """One or more acceptance checks did not pass"""

    kind = "acceptance_failure"
