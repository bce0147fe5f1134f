"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration and data-ingestion
problems exit with 2, numerical failures with 3.
"""


class McqrError(Exception):
    """Base class for package-specific errors."""


class ConfigError(McqrError):
    """A configuration value is missing, malformed, or out of domain."""


class IngestionError(McqrError):
    """An input data file violates the expected long-format contract."""


class NumericalError(McqrError):
    """A linear-algebra or sampling step failed beyond recovery."""

    def __init__(self, message, matrix=None):
        super().__init__(message)
        self.matrix = matrix
