"""Exception taxonomy shared by the engine, the service, and the CLI.

Each error kind maps to one CLI exit code: configuration errors exit 2,
artifact I/O errors exit 3, every other engine failure exits 1.
"""

from __future__ import annotations

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_IO = 3


class FclbenchError(Exception):
    """Base class for all engine errors."""


class ConfigurationError(FclbenchError):
    """Invalid configuration, dimensions, or argument combination."""


class WorkloadError(FclbenchError):
    """Inconsistent workload data, e.g. a label outside the active class mask."""


class NumericError(FclbenchError):
    """Non-finite values encountered where finite numbers are required."""


class ProtocolError(FclbenchError):
    """Federation protocol violation, e.g. aggregating an empty update set."""


class ArtifactIOError(FclbenchError):
    """Failure while reading or writing experiment artifacts."""


class ExperimentAbort(FclbenchError):
    """A round-loop failure, annotated with the round and client where it occurred."""

    def __init__(self, round_id: int, client_id: int | None, cause: Exception):
        self.round_id = round_id
        self.client_id = client_id
        self.cause = cause
        where = f"round {round_id}" if client_id is None else f"round {round_id}, client {client_id}"
        super().__init__(f"experiment aborted at {where}: {cause}")


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the CLI exit code contract."""
    if isinstance(exc, ExperimentAbort):
        exc = exc.cause
    if isinstance(exc, ConfigurationError):
        return EXIT_CONFIG
    if isinstance(exc, ArtifactIOError):
        return EXIT_IO
    return EXIT_RUNTIME


def error_kind(exc: BaseException) -> str:
    """Classify an exception for structured service error payloads."""
    if isinstance(exc, ExperimentAbort):
        exc = exc.cause
    if isinstance(exc, ConfigurationError):
        return "config"
    if isinstance(exc, ArtifactIOError):
        return "io"
    return "runtime"
