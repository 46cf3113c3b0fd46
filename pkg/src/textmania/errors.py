"""Exception types shared across the package."""


class TextManiaError(Exception):
    """Base class for all package errors."""


class ConfigError(TextManiaError, ValueError):
    pass


class TemplateError(ConfigError):
    pass


class BackendUnavailableError(TextManiaError, RuntimeError):
    pass


class DataError(TextManiaError, ValueError):
    pass


class ShapeError(TextManiaError, ValueError):
    pass


class TableFormatError(TextManiaError, ValueError):
    """Malformed delta-table file. ``offset`` is the byte position where parsing failed."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
