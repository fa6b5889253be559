"""
Structured error classes for navfgo.

This module defines the error types raised by the estimator, simulator and
evaluation code, and their mapping to CLI exit codes.
"""

from typing import Any, Dict, List, Optional


class NavError(Exception):
    """Base exception for navigation pipeline operations."""

    def __init__(self, message: str, code: str, exit_code: int, **context: Any) -> None:
        super().__init__(message)
        self.code = code
        self.exit_code = exit_code
        self.context = context

    def to_dict(self) -> Dict[str, Any]:
        """Convert error to dictionary for JSON serialization."""
        result = {
            "status": "error",
            "message": str(self),
            "code": self.code,
            **self.context,
        }
        return result


class ConfigError(NavError):
    """Configuration-related errors (unreadable file, bad values, include cycles)."""

    def __init__(self, message: str, **context: Any) -> None:
        super().__init__(message, "CONFIG_ERROR", 9, **context)


class ValidationError(NavError):
    """Invalid simulation spec or incomplete dataset."""

    def __init__(
        self,
        message: str,
        fields: Optional[List[str]] = None,
        file_path: Optional[str] = None,
        **context: Any,
    ) -> None:
        if fields:
            context["fields"] = fields
        if file_path:
            context["file_path"] = file_path
        super().__init__(message, "VALIDATION_ERROR", 2, **context)


class InputError(NavError):
    """Rejected input: non-monotonic timestamps or out-of-order events."""

    def __init__(self, message: str, t: Optional[float] = None, **context: Any) -> None:
        if t is not None:
            context["t"] = t
        super().__init__(message, "INPUT_ERROR", 3, **context)


class CoverageError(NavError):
    """IMU buffer does not cover the requested interval."""

    def __init__(
        self, message: str, gap_seconds: Optional[float] = None, **context: Any
    ) -> None:
        if gap_seconds is not None:
            context["gap_seconds"] = gap_seconds
        super().__init__(message, "COVERAGE_ERROR", 4, **context)


class EmptyIntervalError(NavError):
    """Fewer than two IMU samples in a preintegration interval."""

    def __init__(self, message: str, **context: Any) -> None:
        super().__init__(message, "EMPTY_INTERVAL", 4, **context)


class ReintegrationRequired(NavError):
    """Bias moved too far from the linearization point for a first-order correction."""

    def __init__(self, message: str, **context: Any) -> None:
        super().__init__(message, "REINTEGRATION_REQUIRED", 1, **context)


class ContractError(NavError):
    """Caller violated an operation precondition (e.g. mismatched timestamps)."""

    def __init__(self, message: str, **context: Any) -> None:
        super().__init__(message, "CONTRACT_ERROR", 1, **context)


class DivergenceError(NavError):
    """Iterative inversion did not converge."""

    def __init__(
        self, message: str, iterations: Optional[int] = None, **context: Any
    ) -> None:
        if iterations is not None:
            context["iterations"] = iterations
        super().__init__(message, "DIVERGENCE", 7, **context)


class DegenerateGeometryError(NavError):
    """Geometry too degenerate to evaluate (zero-length ray, parallel rays)."""

    def __init__(self, message: str, **context: Any) -> None:
        super().__init__(message, "DEGENERATE_GEOMETRY", 1, **context)


class PredictionInvalidError(NavError):
    """Predicted landmark lies behind the camera."""

    def __init__(self, message: str, **context: Any) -> None:
        super().__init__(message, "PREDICTION_INVALID", 1, **context)


class AssociationError(NavError):
    """Too few time-associated pose pairs between two trajectories."""

    def __init__(self, message: str, pairs: Optional[int] = None, **context: Any) -> None:
        if pairs is not None:
            context["pairs"] = pairs
        super().__init__(message, "ASSOCIATION_ERROR", 6, **context)


class InitializationPendingError(NavError):
    """Initialization cannot complete yet (no motion and no configured heading)."""

    def __init__(self, message: str, **context: Any) -> None:
        super().__init__(message, "INITIALIZATION_PENDING", 5, **context)


class WriteError(NavError):
    """File system write failures."""

    def __init__(
        self, message: str, file_path: Optional[str] = None, **context: Any
    ) -> None:
        if file_path:
            context["file_path"] = file_path
        super().__init__(message, "WRITE_ERROR", 8, **context)


class GenericError(NavError):
    """Catch-all for unexpected errors."""

    def __init__(self, message: str, **context: Any) -> None:
        super().__init__(message, "GENERIC_ERROR", 1, **context)


EXIT_CODES = {
    "GENERIC_ERROR": 1,
    "REINTEGRATION_REQUIRED": 1,
    "CONTRACT_ERROR": 1,
    "DEGENERATE_GEOMETRY": 1,
    "PREDICTION_INVALID": 1,
    "VALIDATION_ERROR": 2,
    "INPUT_ERROR": 3,
    "COVERAGE_ERROR": 4,
    "EMPTY_INTERVAL": 4,
    "INITIALIZATION_PENDING": 5,
    "ASSOCIATION_ERROR": 6,
    "DIVERGENCE": 7,
    "WRITE_ERROR": 8,
    "CONFIG_ERROR": 9,
}


def get_exit_code(error_code: str) -> int:
    """Get CLI exit code for error code string."""
    return EXIT_CODES.get(error_code, 1)
