"""Exception hierarchy shared across the package."""


class BicephError(Exception):
    """Base class for all package errors."""


class ShapeError(BicephError, ValueError):
    """Array dimensions do not chain."""


class StateError(BicephError, RuntimeError):
    """An operation was called out of order, e.g. backward before forward."""


class ValidationError(BicephError, ValueError):
    """Invalid argument, configuration or input data."""


class DegenerateInputError(ValidationError):
    """Input is numerically degenerate (zero-norm row, zero variance...)."""


class TrainingError(BicephError, RuntimeError):
    """Training diverged (non-finite loss or parameters)."""
