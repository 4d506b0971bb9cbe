"""Exception hierarchy.

Checker results (a bound that fails on some pair of times) are reported as
values, never raised. Exceptions are reserved for malformed input and for
constructions that cannot be carried out.
"""


class SmallGainError(Exception):
    """Base class for all toolkit errors."""


class DomainError(SmallGainError, ValueError):
    """Argument outside the domain of a function (negative time, eps <= C, ...)."""


class ClassError(SmallGainError, ValueError):
    """A function does not belong to its declared comparison class."""


class IntervalError(SmallGainError, ValueError):
    """Interval endpoints in the wrong order."""


class HorizonError(SmallGainError, ValueError):
    """Interval reaches past the trajectory horizon."""


class DataError(SmallGainError, ValueError):
    """Malformed or inconsistent sampled data."""


class SynthesisError(SmallGainError):
    """A bound could not be constructed from the given data."""


class HypothesisError(SynthesisError):
    """Sampled data violate a hypothesis required by a construction.

    ``bullet`` names the violated hypothesis and ``witness`` holds the
    offending sample.
    """

    def __init__(self, message, bullet=None, witness=None):
        super().__init__(message)
        self.bullet = bullet
        self.witness = witness


class PreconditionError(SmallGainError, ValueError):
    """An operation was called on data that fails its precondition."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class ContractionError(PreconditionError):
    """A gain (or loop gain) is not a contraction where one is required."""


class DepthError(SynthesisError):
    """A decay schedule was exhausted before reaching the requested level."""


class CouplingError(SmallGainError):
    """The implicit output loop of an interconnection did not converge."""

    def __init__(self, message, residual=None, time=None):
        super().__init__(message)
        self.residual = residual
        self.time = time


class ConfigError(SmallGainError, ValueError):
    """Scenario configuration is malformed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
