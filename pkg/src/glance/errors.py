"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericsError -> 4.
"""


class GlanceError(Exception):
    """Base class for package errors."""


class ConfigError(GlanceError):
    """Invalid configuration value or inconsistent dimensions."""


class DataError(GlanceError):
    """Missing, malformed, or dimensionally wrong input data."""


class ParseError(DataError):
    """Malformed binary or JSON payload; carries a byte offset when known."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (at byte offset {offset})")
        self.offset = offset


class NumericsError(GlanceError):
    """Non-finite values where finite ones are required."""


class GazeAwayError(GlanceError):
    """Gaze direction points away from the image plane; no fixation exists."""


class DetectorError(GlanceError):
    """External detector failed, timed out, or returned a malformed response."""
