"""Exception and warning types raised by the package."""

from __future__ import annotations


class FR2SIDError(Exception):
    """Base class for all errors raised by this package.

    ``stage`` is filled in by the identification pipelines with the name of
    the step that failed, so callers can report where a run broke down.
    """

    stage: str | None = None

    def __str__(self) -> str:
        msg = super().__str__()
        return f"[{self.stage}] {msg}" if self.stage else msg


class InputError(FR2SIDError, ValueError):
    """Malformed, non-finite or inconsistent input data."""


class ParseError(InputError):
    """A data or model file could not be parsed."""

    def __init__(self, msg: str, line: int | None = None, offset: int | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte offset {offset}")
        super().__init__(f"{msg} ({', '.join(where)})" if where else msg)
        self.line = line
        self.offset = offset


class DimensionError(InputError):
    """Operands have incompatible shapes."""


class InsufficientDataError(InputError):
    """Too few samples for the requested horizon."""


class ConfigError(FR2SIDError, ValueError):
    """Invalid configuration value."""


class NumericalError(FR2SIDError, ArithmeticError):
    """Base class for failures of the numerical estimators."""


class DefinitenessError(NumericalError):
    """A matrix expected to be positive definite is not."""

    def __init__(self, msg: str, pivot: int):
        super().__init__(msg)
        self.pivot = pivot


class ExcitationError(NumericalError):
    """The input is not persistently exciting (R11 is singular)."""


class IllConditionedError(NumericalError):
    """A matrix that must have full column rank is (numerically) deficient."""

    def __init__(self, msg: str, cond: float):
        super().__init__(msg)
        self.cond = cond


class NoiseDegenerateError(NumericalError):
    """The residual factor carries no usable noise information."""


class EmptyModelError(NumericalError):
    """The selected model order is zero."""


class InstabilityError(NumericalError):
    """A simulation diverged or would overflow."""


class GenerationError(NumericalError):
    """A random system with the requested properties could not be produced."""


class UndefinedSubspaceError(NumericalError):
    """A subspace was requested for a zero matrix."""


class MemoryCapError(FR2SIDError, MemoryError):
    """The predicted working set exceeds the configured memory cap."""

    def __init__(self, msg: str, estimate_bytes: int, cap_bytes: int):
        super().__init__(msg)
        self.estimate_bytes = estimate_bytes
        self.cap_bytes = cap_bytes


class StabilityWarning(RuntimeWarning):
    """The estimated predictor A - KC is not strictly stable."""


class NoiseDegenerateWarning(RuntimeWarning):
    """K and eta were set to zero because the data look noise free."""
