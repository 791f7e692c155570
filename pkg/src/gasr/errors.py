"""Exception types shared across the package."""


class GasrError(Exception):
    """Base class for package errors."""


class DataError(GasrError, ValueError):
    """Malformed, inconsistent or unusable input data."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(GasrError, ValueError):
    """Invalid run configuration."""


class NumericalError(GasrError, ArithmeticError):
    """A computation produced a non-finite or degenerate value."""
