"""Exception taxonomy shared by all maw modules."""


class MawError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(MawError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(MawError, ValueError):
    """Input values violate a mathematical precondition."""


class NotPSDError(DomainError):
    """A matrix required to be positive semidefinite is not."""


class NumericalError(MawError, ArithmeticError):
    """A numerical procedure failed (NaN, non-convergence)."""


class ConfigError(MawError, ValueError):
    """A run configuration is malformed or contains unknown keys."""


class DataError(MawError, ValueError):
    """A dataset file is missing, unreadable, or malformed."""


class MetricError(DomainError):
    """A metric is undefined for the given labels (single-class input)."""
