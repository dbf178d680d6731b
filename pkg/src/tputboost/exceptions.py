"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class TputboostError(Exception):
    exit_code = 1


class ConfigError(TputboostError, ValueError):
    exit_code = 2


class DataError(TputboostError, ValueError):
    exit_code = 3


class SchemaError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class TrainingError(TputboostError, RuntimeError):
    exit_code = 4


class ModelIntegrityError(TputboostError, ValueError):
    """Raised when a model file (or in-memory tree) is inconsistent."""

    exit_code = 5

    def __init__(self, message, field=None):
        if field is not None:
            message = f"invalid field {field!r}: {message}"
        super().__init__(message)
        self.field = field
