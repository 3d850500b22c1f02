"""Exception types raised across the package."""

from __future__ import annotations


class FedAMDError(Exception):
    """Base class for all package errors."""


class DimensionError(FedAMDError, ValueError):
    """Vector or matrix shapes do not agree."""


class ConfigError(FedAMDError, ValueError):
    """An experiment or algorithm configuration is invalid."""


class FormatError(FedAMDError, ValueError):
    """A data file is malformed.

    ``offset`` is the byte position at which the problem was detected.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class SingularityError(FedAMDError, ArithmeticError):
    """A linear system has no unique solution."""


class NumericError(FedAMDError, ArithmeticError):
    """A closed-form expression left its valid domain."""


class UsageError(FedAMDError, ValueError):
    """An API was called with arguments outside its contract."""


class RoundError(FedAMDError, RuntimeError):
    """A failure inside training, tagged with the round it happened in."""

    def __init__(self, round: int, cause: BaseException):
        super().__init__(f"round {round}: {type(cause).__name__}: {cause}")
        self.round = round
