"""Exception types shared across the package.

Each carries the process exit code the CLI maps it to.
"""


class MpmFuseError(Exception):
    exit_code = 1


class ConfigError(MpmFuseError, ValueError):
    """Invalid or unreadable configuration."""

    exit_code = 2

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        prefix = []
        if line is not None:
            prefix.append(f"line {line}")
        if field is not None:
            prefix.append(f"field '{field}'")
        if prefix:
            message = f"{', '.join(prefix)}: {message}"
        super().__init__(message)


class DataError(MpmFuseError, ValueError):
    """Malformed or inconsistent input data (shapes, headers, ids)."""

    exit_code = 3


class NumericalError(MpmFuseError, ArithmeticError):
    """A loss or gradient became non-finite."""

    exit_code = 4
