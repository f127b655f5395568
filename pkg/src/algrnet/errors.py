"""Exception types shared across the package."""


class AlgrnetError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(AlgrnetError, ValueError):
    """Invalid configuration: bad rule table, inconsistent shapes, unknown keys."""

    exit_code = 2


class InputError(AlgrnetError, ValueError):
    """Invalid runtime input (non-finite landmarks, shape mismatch, bad range)."""

    exit_code = 3


class DegenerateRegionError(InputError):
    pass


class ManifestError(InputError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericError(AlgrnetError, RuntimeError):
    """Non-finite loss or activations during training."""

    exit_code = 4


class MissingFileError(AlgrnetError, FileNotFoundError):
    exit_code = 3
