"""Exception hierarchy shared across the package."""

from __future__ import annotations


class ChunkShieldError(Exception):
    """Base class for all package errors."""


class DimensionError(ChunkShieldError, ValueError):
    """Array shapes are incompatible with the requested operation."""


class ParameterError(ChunkShieldError, ValueError):
    """An argument lies outside its valid range."""


class FormatError(ChunkShieldError, ValueError):
    """Image file is malformed or uses an unsupported encoding."""


class DegenerateGridError(ChunkShieldError, ValueError):
    """The chunk grid has too few chunks for neighbourhood statistics."""


class UndefinedSplitError(ChunkShieldError, ValueError):
    """A candidate split leaves one side empty."""


class NumericError(ChunkShieldError, ArithmeticError):
    """Non-finite values reached a numerical routine."""


class ConfigError(ChunkShieldError, ValueError):
    """Configuration file or override is invalid."""
