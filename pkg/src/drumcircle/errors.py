"""Exception types shared across the package."""


class DrumCircleError(Exception):
    """Base class for all package errors."""


class ConfigError(DrumCircleError, ValueError):
    """Invalid configuration: bad parameter values or unknown config keys."""


class DataError(DrumCircleError, ValueError):
    """Malformed or non-finite input data."""


class InsufficientDataError(DataError):
    """Too few samples/onsets to compute the requested quantity."""


class GeometryError(DataError):
    """Degenerate geometry, e.g. coincident foot markers."""


class ProtocolError(DrumCircleError, ValueError):
    """Datagram that cannot be decoded. Carries the byte offset of the fault."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class ValidationError(DataError):
    """Trial record violating the persisted schema. Names line and field."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)
        self.line = line
        self.field = field


class SessionError(DrumCircleError, RuntimeError):
    """Live session failure: handshake timeout or mid-trial peer silence."""
