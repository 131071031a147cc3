"""
Exception hierarchy for the tdh toolkit.

Every failure a caller can act on has its own class so stages and the CLI
can report it by name.
"""

from typing import Optional


class TDHError(Exception):
    """Base class for all toolkit errors."""


class InvalidInput(TDHError, ValueError):
    """Argument outside the domain of an operation (non-finite, negative bias...)."""


class NonPositiveInput(InvalidInput):
    """A frequency, distance or power that must be > 0 was not."""


class NoNDR(TDHError):
    """The IV curve has no negative differential resistance interval."""


class FitDiverged(TDHError):
    """Least-squares calibration did not reduce the residual."""


class StepUnstable(TDHError):
    """Transient integration blew up (a state exceeded the blow-up limit)."""

    def __init__(self, message: str, time: Optional[float] = None):
        super().__init__(message)
        self.time = time


class TraceTooShort(TDHError):
    """Trace has fewer samples than spectral analysis requires."""


class NoSignal(TDHError):
    """No non-DC spectral bin rises above the noise floor."""


class ZeroDCPower(TDHError):
    """Efficiency requested with zero DC power."""


class InsufficientPoints(TDHError):
    """Not enough data points for the requested statistic."""


class SchemaError(TDHError):
    """A persisted map or database does not match its schema."""

    def __init__(self, message: str, field_path: str = ""):
        super().__init__(f"{field_path}: {message}" if field_path else message)
        self.field_path = field_path


class ConfigError(TDHError):
    """Configuration file could not be parsed or validated."""

    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        location = []
        if line is not None:
            location.append(f"line {line}")
        if field:
            location.append(f"field '{field}'")
        prefix = f"[{', '.join(location)}] " if location else ""
        super().__init__(f"{prefix}{message}")
        self.line = line
        self.field = field


class DuplicateId(TDHError):
    """A fingerprint with this board id is already enrolled."""


class TooFewSweeps(TDHError):
    """Enrollment needs at least three sweeps."""


class EmptyDatabase(TDHError):
    """Identification against a database with no fingerprints."""


class GridMismatch(TDHError):
    """Two signature maps do not share a compatible grid."""


class InfeasibleAtContact(TDHError):
    """Forward link cannot power the tag even at the minimum distance."""
