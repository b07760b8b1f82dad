"""Errors raised by the SegDecide toolkit."""

from __future__ import annotations


class SegDecideError(Exception):
    """Base error for all SegDecide failures on user data or configuration."""


class TensorFormatError(SegDecideError):
    """Error to indicate an SGT1 or PGM file is malformed or truncated."""


class InvariantError(SegDecideError):
    """Error to indicate a tensor violates its type invariants.

    Attributes:
        pixel: The (row, col) of the first offending pixel, if any.
    """

    def __init__(self, message: str, pixel: tuple[int, int] | None = None) -> None:
        super().__init__(message)
        self.pixel = pixel


class ShapeMismatchError(SegDecideError):
    """Error to indicate inputs that must share a shape do not.

    Attributes:
        index: Position of the offending item in the input sequence, if any.
    """

    def __init__(self, message: str, index: int | None = None) -> None:
        super().__init__(message)
        self.index = index


class EmptyInputError(SegDecideError):
    """Error to indicate an operation received no data to work on."""


class ConfigError(SegDecideError):
    """Error to indicate an invalid configuration file or flag value."""


class UnsatisfiableConfigError(ConfigError):
    """Error to indicate a synthetic configuration cannot be sampled."""


class ScenarioError(SegDecideError):
    """Error to indicate the global-vs-local scenario cannot be constructed."""
