"""Exception hierarchy shared by the library and the CLI.

The CLI maps these onto exit codes: configuration problems exit 2,
data problems exit 3, numeric non-convergence exits 4.
"""


class DomainError(ValueError):
    """An argument is outside the mathematical domain of an operation."""


class ConfigError(ValueError):
    """An experiment configuration is inconsistent or incomplete."""


class DataError(ValueError):
    """A dataset or metadata file is malformed or inconsistent."""


class ParseError(DataError):
    """A text input failed to parse; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConvergenceError(RuntimeError):
    """An iterative method hit its iteration cap; carries the last iterate."""

    def __init__(self, message: str, last_value=None):
        self.last_value = last_value
        super().__init__(message)
