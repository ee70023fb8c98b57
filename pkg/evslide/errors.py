"""Exception types raised by evslide."""

from typing import Optional


class EvslideError(Exception):
    """Base class for all evslide errors."""


class EventFormatError(EvslideError, ValueError):
    """A record in an event file could not be parsed."""

    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class EventValidationError(EvslideError, ValueError):
    """An event breaks polarity or geometry rules; ``offset`` locates it in a file."""

    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class EventEncodingError(EvslideError, ValueError):
    """An event field does not fit the binary record layout."""


class OutOfOrderError(EvslideError, ValueError):
    """Timestamps went backwards where a monotone stream is required."""


class DuplicateTimestampError(EvslideError, ValueError):
    """Two events share a pixel and a timestamp."""

    def __init__(self, x: int, y: int, t: int):
        self.pixel = (x, y)
        self.t = t
        super().__init__(
            f"duplicate timestamp {t} at pixel ({x}, {y}); "
            f"perturb the later event to t={t + 1} (see events.perturb_duplicates)"
        )


class IndexQueryError(EvslideError, ValueError):
    """A radius query was malformed."""


class ConfigError(EvslideError, ValueError):
    """A run or graph configuration is invalid."""


class ShapeError(EvslideError, ValueError):
    """Layer shapes do not chain."""


class WeightsError(EvslideError, ValueError):
    """A weights document is missing fields or holds bad values."""


class TopologyError(EvslideError, RuntimeError):
    """Slide state and graph topology disagree."""


class DigestMismatchError(EvslideError, ValueError):
    """Two reports were produced from different streams."""


class FlopDescriptorError(EvslideError, ValueError):
    """An operation descriptor has no FLOP convention."""
