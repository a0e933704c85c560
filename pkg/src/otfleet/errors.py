"""Exception taxonomy and process exit codes.

Every command maps failures onto a small, documented set of exit codes:

====  =========================================
code  meaning
====  =========================================
0     success
1     unexpected internal error
2     configuration error (bad config, unknown task, bad flag value)
3     compatibility / schema error (encoder mismatch, malformed types)
4     I/O or parse error (unreadable files, truncated records, busy port)
5     protocol error (queue misuse, console message violations)
====  =========================================
"""


class OtfleetError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(OtfleetError):
    """Invalid configuration value or unknown identifier."""

    exit_code = 2


class DomainError(OtfleetError):
    """Input outside an operation's mathematical domain."""

    exit_code = 2


class SizeError(OtfleetError):
    """Problem dimensions exceed an enforced cap."""

    exit_code = 2


class SchemaError(OtfleetError):
    """Structurally invalid data (shape or dtype mismatch)."""

    exit_code = 3


class CompatibilityError(OtfleetError):
    """Artifacts that cannot be combined (e.g. encoder id mismatch)."""

    exit_code = 3


class FileError(OtfleetError):
    """Filesystem failure: unreadable, unwritable, or refused overwrite."""

    exit_code = 4


class ParseError(OtfleetError):
    """Malformed persisted record; carries the offending record index."""

    exit_code = 4

    def __init__(self, message: str, record_index: int | None = None):
        if record_index is not None:
            message = f"{message} (record {record_index})"
        super().__init__(message)
        self.record_index = record_index


class SolverError(OtfleetError):
    """Numerical failure inside a solver."""

    exit_code = 1


class ProtocolError(OtfleetError):
    """Violation of the fleet or console messaging contract."""

    exit_code = 5
