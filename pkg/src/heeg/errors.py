"""Exception taxonomy shared by the library and the CLI.

The CLI maps each class to a fixed process exit code, so library code
should raise the most specific one that applies.
"""


class HeegError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ValidationError(HeegError):
    """Bad arguments, configuration, or violated preconditions."""

    exit_code = 1


class DataError(HeegError):
    """Malformed, missing, or internally inconsistent data."""

    exit_code = 2


class NumericError(HeegError):
    """Numeric failure: non-finite values, divergence, impossible rates."""

    exit_code = 3
