"""Exception types shared across the pipeline.

The CLI maps these onto exit codes (validation 2, sync 3, I/O 4), so new
error conditions should subclass one of the families below rather than
raising bare ValueError.
"""

from __future__ import annotations


class HarnessError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(HarnessError):
    """Input outside an operation's mathematical domain (bad pixel, zero ray)."""


class ConfigError(HarnessError):
    """Invalid configuration value (view fov, calibration matrix, spec field)."""


class DataError(HarnessError):
    """Well-formed input that violates a data contract (unordered timestamps)."""


class ValidationError(HarnessError):
    """Record that parsed but failed semantic validation."""


class ParseError(HarnessError):
    """Malformed wire record.  Carries the byte offset where parsing failed."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class InsufficientEventsError(HarnessError):
    """Too few tap events to estimate a clock mapping."""


class SyncFailedError(HarnessError):
    """No consistent tap matching found within the allowed offset range."""


class NotSyncedError(HarnessError):
    """Session has no clock mapping yet; run the sync step first."""


class InsufficientDataError(HarnessError):
    """Series too short for the requested analysis."""


class PairingError(HarnessError):
    """Prediction/label sequences whose timestamps do not pair up."""

    def __init__(self, message: str, offenders: list[float] | None = None):
        self.offenders = offenders or []
        if self.offenders:
            shown = ", ".join(f"{t:g}" for t in self.offenders[:8])
            more = "" if len(self.offenders) <= 8 else ", ..."
            message = f"{message}: [{shown}{more}]"
        super().__init__(message)


class RecordingError(HarnessError):
    """Failure while persisting a session to disk."""
