"""Exception hierarchy; the CLI maps each class to its own exit code."""


class GroupFTSError(Exception):
    """Base class for package errors."""


class ConfigError(GroupFTSError, ValueError):
    """Invalid user-supplied configuration (exit code 2)."""


class DataError(GroupFTSError, ValueError):
    """Malformed or inconsistent input data (exit code 3)."""


class NumericalError(GroupFTSError, ArithmeticError):
    """A numerical procedure could not produce a valid result (exit code 4)."""
