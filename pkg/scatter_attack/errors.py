"""
Exception types raised across the scatter-attack toolkit.

Every error subclasses the built-in exception a caller would naturally
catch (``ValueError`` for bad input, ``ArithmeticError`` for numerical
failures) so the toolkit can be used without importing this module.
"""

from __future__ import annotations

from typing import Optional


class ParameterError(ValueError):
    """Invalid parameters or inconsistent array dimensions."""


class ConfigError(ValueError):
    """A configuration file, override or environment value is invalid."""


class InitError(ValueError):
    """Scatterers cannot be initialized (for example, an empty target mask)."""


class UndefinedRateError(ValueError):
    """A success rate was requested for an empty outcome list."""


class FormatError(ValueError):
    """A file does not match the expected binary/text format.

    Parameters
    ----------
    field:
        Name of the header field or section that failed to parse
        (``"magic"``, ``"width"``, ``"maxval"``, ``"data"`` ...).
    message:
        Human-readable description.
    """

    def __init__(self, field: str, message: str, path: Optional[str] = None) -> None:
        self.field = field
        self.path = path
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{field}: {message}")


class UnsupportedFormatError(FormatError):
    """The input is not in a format this toolkit can read."""


class NumericalError(ArithmeticError):
    """NaN or Inf appeared in a computed quantity."""
