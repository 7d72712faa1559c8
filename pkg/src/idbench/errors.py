class IdBenchError(Exception):
    """Base class for errors raised by idbench."""


class InvalidParameterError(IdBenchError, ValueError):
    """An argument is outside the domain an operation accepts."""


class ResourceLimitError(IdBenchError):
    """The request would exceed a configured size or compute budget."""
