"""Exceptions raised by skyaug; each maps to a command-line exit code."""


class SkyaugError(Exception):
    exit_code = 1


class UsageError(SkyaugError):
    """Bad configuration key/value or invalid combination of options."""
    exit_code = 1


class DataError(SkyaugError, ValueError):
    """Malformed input files or data that cannot be processed."""
    exit_code = 2


class NonFiniteError(DataError):
    """A forward or backward pass produced NaN or Inf."""


class StageOrderError(SkyaugError):
    """A stage was run before the stage producing its inputs."""
    exit_code = 3
