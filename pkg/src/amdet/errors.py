"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: UsageError -> 1, DataError -> 2,
NumericalError -> 3. Library code raises them directly.
"""


class AmdetError(Exception):
    """Base class for all package errors."""


class UsageError(AmdetError):
    """Bad command-line arguments or malformed configuration."""


class DataError(AmdetError):
    """Invalid, inconsistent, or corrupted input data / file formats."""


class NumericalError(AmdetError):
    """Non-finite values where finite numbers are required (NaN loss, inf gradient)."""
