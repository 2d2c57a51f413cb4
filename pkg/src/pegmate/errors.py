"""Exception hierarchy shared by all pegmate modules."""


class PegmateError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(PegmateError, ValueError):
    """Inputs violate a documented precondition (CLI exit code 2)."""


class ZeroDepthError(ValidationError):
    """Depth value equals the invalid-depth sentinel (0)."""


class DegenerateError(ValidationError):
    """Point set or mask has no area (fewer than 3 points or collinear)."""


class InvalidPolygonError(ValidationError):
    pass


class InvalidTransformError(ValidationError):
    pass


class InvalidDimensionsError(ValidationError):
    pass


class PlacementFailure(PegmateError):
    """Rejection sampling could not place all holes on the board."""


class FormatError(ValidationError):
    def __init__(self, message, path=None):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class MissingFileError(ValidationError, FileNotFoundError):
    pass


class EmptyCloudError(ValidationError):
    pass


class ArityMismatchError(ValidationError):
    pass


class EmptyDatasetError(ValidationError):
    pass


class BackendError(PegmateError):
    """A matcher backend failed; ``index`` names the candidate when known."""

    def __init__(self, message, index=None):
        super().__init__(message if index is None else f"candidate {index}: {message}")
        self.index = index


class TransportError(BackendError):
    """Network failure or 5xx after all retries (CLI exit code 3)."""


class BadStatusError(BackendError):
    def __init__(self, status, message="", index=None):
        super().__init__(f"HTTP {status} {message}".strip(), index)
        self.status = status


class UnparseableError(BackendError):
    pass


class AllUnparseableError(BackendError):
    pass


class IoError(PegmateError, OSError):
    """A report or scene file could not be written."""
