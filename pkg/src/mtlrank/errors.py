"""Exception hierarchy shared by every module.

Each class maps onto one CLI exit code (see ``mtlrank.harness.cli``).
"""


class MtlRankError(Exception):
    """Base class for all package errors."""


class DimensionError(MtlRankError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(MtlRankError, ValueError):
    """A documented precondition was violated by the caller."""


class ConfigError(MtlRankError, ValueError):
    """Invalid configuration value or combination."""


class DataError(MtlRankError, ValueError):
    """Malformed or inconsistent input data."""


class NumericalError(MtlRankError, ArithmeticError):
    """A kernel produced NaN/Inf or training diverged."""
