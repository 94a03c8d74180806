"""Exception hierarchy shared across the package."""


class NeuroloopError(Exception):
    """Base class for all package-specific errors."""


class InvalidParameterError(NeuroloopError, ValueError):
    """A parameter is outside its valid range (e.g. cutoff beyond Nyquist)."""


class ConfigurationError(NeuroloopError):
    """Inconsistent configuration: missing channels, rate mismatch, bad setup."""


class InsufficientDataError(NeuroloopError):
    """Not enough samples for the requested operation."""


class SequencingError(NeuroloopError):
    """Windows or chunks arrived out of order, overlapping, or with gaps."""


class DegenerateBaselineError(NeuroloopError):
    """The comparison baseline power is (numerically) zero."""


class DegenerateBandError(InvalidParameterError):
    """A derived frequency band would have a non-positive lower edge."""


class BaselineMissingError(NeuroloopError):
    """No resting-state baseline is available for a participant/band."""


class NumericalError(NeuroloopError):
    """A numerical procedure failed (e.g. singular covariance)."""


class ParseError(NeuroloopError):
    """A serialized record could not be parsed.

    Carries the 1-based line number and, when known, the byte offset of the
    offending input.
    """

    def __init__(self, message: str, line_number: int | None = None,
                 byte_offset: int | None = None):
        self.line_number = line_number
        self.byte_offset = byte_offset
        parts = [message]
        if line_number is not None:
            parts.append(f"line {line_number}")
        if byte_offset is not None:
            parts.append(f"byte offset {byte_offset}")
        super().__init__(": ".join(parts))


class ProtocolError(NeuroloopError):
    """A well-formed message violated the wire protocol or session state."""


class ClockAnomalyError(NeuroloopError):
    """Clock-offset timestamps imply a negative round trip."""
