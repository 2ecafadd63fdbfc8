"""Exception hierarchy shared by all revisible modules."""


class RevisibleError(Exception):
    """Base class for every structured error raised by this package."""


class ShapeError(RevisibleError):
    """A tensor or image has an incompatible shape or dimension."""


class ConfigError(RevisibleError):
    """A configuration value, flag, or spec string is invalid."""


class FormatError(RevisibleError):
    """A binary file is malformed. Carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CheckpointError(FormatError):
    """A checkpoint file failed magic, version, integrity, or layout checks."""


class ManifestError(RevisibleError):
    """A dataset manifest references files that do not exist."""

    def __init__(self, missing: list[str]):
        self.missing = list(missing)
        listing = ", ".join(self.missing)
        super().__init__(f"manifest references {len(self.missing)} missing file(s): {listing}")
