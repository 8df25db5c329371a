"""Exception types shared by the core modules, tools and the CLI.

Every error derives from ValueError so callers of the library can catch
them generically; the CLI maps each class to its exit code.
"""

from typing import Optional


class LabError(ValueError):
    """Base class for all lab errors."""

    exit_code = 1


class ConfigError(LabError):
    """Invalid run configuration or argument."""

    exit_code = 2


class DataFormatError(LabError):
    """Malformed dataset, tensor or mask file."""

    exit_code = 3

    def __init__(self, message: str, offset: Optional[int] = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericalError(LabError):
    """Non-finite values or an ill-defined numerical operation."""

    exit_code = 4
