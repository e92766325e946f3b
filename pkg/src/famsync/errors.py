"""Exception types shared across the library."""


class FamsyncError(Exception):
    """Base class for all library errors."""


class ConfigError(FamsyncError):
    """Invalid or inconsistent configuration."""


class MediaError(FamsyncError):
    """Operation not supported or failed at the media layer."""


class RangeError(FamsyncError):
    """Address or offset outside the permitted range."""


class CorruptionError(FamsyncError):
    """On-media structure failed a magic or integrity check."""


class LogFullError(FamsyncError):
    """A per-thread undo log slot has no room for the next entry."""


class EnumerationBoundError(MediaError):
    """Too many flushed-but-unfenced lines to enumerate crash states."""


class OutOfMemoryError(FamsyncError):
    """Persistent heap cannot satisfy an allocation."""


class ContractViolationError(FamsyncError):
    """Two threads modified overlapping ranges between syncs."""
