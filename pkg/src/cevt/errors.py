"""Exception types shared across the package."""


class CevtError(Exception):
    """Base class for all package errors."""


class GevParameterError(CevtError, ValueError):
    """Invalid GEV parameters (non-positive scale or non-finite fields)."""


class DomainError(CevtError, ValueError):
    """An argument lies outside the domain of an operation."""


class InsufficientDataError(CevtError, ValueError):
    """Too few samples to fit a distribution."""


class DegenerateDataError(CevtError, ValueError):
    """Samples have zero variance."""


class BankConstructionError(CevtError):
    """No class group and no pooled set is large enough to fit."""


class ConfigError(CevtError, ValueError):
    """Invalid configuration key, value or constraint."""


class MetricUndefinedError(CevtError, ValueError):
    """A metric needs a class that is absent from the ground truth."""


class FeatureParseError(CevtError, ValueError):
    """Malformed feature manifest."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UsageError(CevtError, RuntimeError):
    """An API was called out of order (e.g. backward without forward)."""


class CheckpointError(CevtError, ValueError):
    """Malformed or incompatible checkpoint file."""
