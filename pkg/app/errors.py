"""Error hierarchy shared by the library and the command line.

Every error carries a ``category`` so the CLI can print a single
``ERROR <category>: <message>`` line without inspecting the type.
"""

from __future__ import annotations

from typing import Optional


class ScaError(Exception):
    """Base class for all errors raised by this package."""

    category = "internal"


class ShapeError(ScaError, ValueError):
    category = "shape"


class DataError(ScaError, ValueError):
    category = "data"


class ConfigError(ScaError, ValueError):
    category = "config"


class FormatError(ScaError, ValueError):
    """Malformed binary input; ``offset`` is the byte position of the problem."""

    category = "format"

    def __init__(self, message: str, offset: Optional[int] = None) -> None:
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)


class UsageError(ScaError, RuntimeError):
    category = "usage"


class DivergenceError(ScaError, RuntimeError):
    category = "divergence"


class GradcheckFailure(ScaError):
    """Analytic and numerical gradients disagree beyond the tolerance."""

    category = "gradcheck"


def shape_mismatch(what: str, expected, actual) -> ShapeError:
    """Build a ShapeError naming both shapes."""
    return ShapeError(f"{what}: expected shape {tuple(expected)}, got {tuple(actual)}")
