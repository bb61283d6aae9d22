"""Exception hierarchy shared across the package."""

from __future__ import annotations


class SirtgpError(Exception):
    """Base class for all package errors."""


class InvalidInputError(SirtgpError, ValueError):
    """An argument is outside the domain of the operation."""


class StructuralError(SirtgpError, ValueError):
    """Arrays or records have inconsistent shapes or missing entries."""


class NumericalFailure(SirtgpError, ArithmeticError):
    """A sampler step produced a non-positive variance or non-finite value."""

    def __init__(self, message: str, sweep: int | None = None):
        super().__init__(message if sweep is None else f"sweep {sweep}: {message}")
        self.sweep = sweep


class GenerationError(SirtgpError):
    """Simulation parameters cannot produce a valid session."""


class EstimationError(SirtgpError):
    """Hyperparameter estimation has no usable input."""


class ContainerError(SirtgpError):
    """Binary container could not be decoded. ``code`` identifies the failure."""

    code = "container"


class BadMagicError(ContainerError):
    code = "bad-magic"


class UnsupportedVersionError(ContainerError):
    code = "unsupported-version"


class TruncatedPayloadError(ContainerError):
    code = "truncated"


class DimensionMismatchError(ContainerError):
    code = "dimension-mismatch"


class DegenerateSignalWarning(UserWarning):
    """Zero-variance channel or column was encountered and zeroed."""
