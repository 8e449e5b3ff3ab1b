"""Exception hierarchy shared across the package.

Each family maps to a CLI exit category (see ``fieldbench.cli``).
"""

from __future__ import annotations


class FieldBenchError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(FieldBenchError):
    """Invalid configuration or topology."""

    exit_code = 2

    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


class BackendError(FieldBenchError):
    pass


class AlreadyExists(BackendError):
    pass


class NotFound(BackendError):
    pass


class PoolNotFound(NotFound):
    pass


class ContainerNotFound(NotFound):
    pass


class ObjectNotFound(NotFound):
    pass


class ClosedHandle(BackendError):
    pass


class OutOfBounds(BackendError):
    pass


class InvalidKey(FieldBenchError):
    pass


class FieldNotFound(FieldBenchError):
    """A field lookup failed; subclasses say at which layer."""


class MainIndexNotFound(FieldNotFound):
    pass


class ForecastIndexNotFound(FieldNotFound):
    pass


class ArrayMissing(FieldNotFound):
    pass


class WorkloadError(FieldBenchError):
    """A worker failed; the run was aborted."""

    exit_code = 3

    def __init__(self, message: str, identity=None, log=None):
        super().__init__(message)
        self.identity = identity
        self.log = log


class TelemetryError(FieldBenchError):
    exit_code = 4


class MissingWorker(TelemetryError):
    pass


class LogParseError(TelemetryError):
    def __init__(self, path, line: int, reason: str):
        super().__init__(f"{path}:{line}: {reason}")
        self.path = path
        self.line = line
        self.reason = reason


class MetricsError(FieldBenchError):
    exit_code = 5


class UnsynchronizedDriver(MetricsError):
    pass


class EmptyPhase(MetricsError):
    pass


class ZeroDuration(MetricsError):
    pass


class MissingIteration(MetricsError):
    pass


class NotPatternB(MetricsError):
    pass


class IncompleteLog(MetricsError):
    pass
