"""Exception types shared across the package."""


class VideoStereoError(Exception):
    """Base class for all package-specific errors."""


class DomainError(VideoStereoError, ValueError):
    """A numeric argument is outside the mathematical domain of an operation
    (non-positive depth or disparity, point behind the camera, ...)."""


class ConfigurationError(VideoStereoError, ValueError):
    """Inconsistent shapes, invalid parameter combinations, or a bad config key."""


class EmptyHintError(VideoStereoError, RuntimeError):
    """A semi-dense disparity map with zero valid pixels reached the completion
    stage; callers are expected to fall back to another disparity source."""


class UndefinedLossError(VideoStereoError, RuntimeError):
    """A loss was requested over an empty set of contributing pixels."""


class ParseError(VideoStereoError, ValueError):
    """A file does not conform to its expected format.

    Carries enough location information (path plus line number or byte
    offset) for the CLI to print an actionable diagnostic.
    """

    def __init__(self, path, reason, line=None, offset=None):
        self.path = str(path)
        self.reason = reason
        self.line = line
        self.offset = offset
        where = self.path
        if line is not None:
            where += f":{line}"
        if offset is not None:
            where += f" (byte {offset})"
        super().__init__(f"{where}: {reason}")
