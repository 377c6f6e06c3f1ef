"""Exception hierarchy.

Each family maps to one CLI exit code (see :mod:`bwmeta.cli`).
"""


class BwMetaError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(BwMetaError, ValueError):
    """Invalid configuration or arguments."""

    exit_code = 2


class DataError(BwMetaError):
    """Missing, malformed or inconsistent data on disk or in memory."""

    exit_code = 3


class NumericalError(BwMetaError, ArithmeticError):
    """A computation produced non-finite or undefined values."""

    exit_code = 4


class IntegrationError(NumericalError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class AssemblyError(NumericalError):
    pass


class TransformError(DataError, ValueError):
    """Signal length or coefficient layout incompatible with the transform."""


class MetricError(DataError, ValueError):
    pass


class StatsError(DataError, ValueError):
    pass
