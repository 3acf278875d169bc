"""Exception hierarchy for glmpath."""

from typing import Any


class GlmPathError(Exception):
    """Base class for all glmpath errors."""

    def __init__(self, message: str, **details: Any) -> None:
        super().__init__(message)
        self.details = details


class ConfigError(GlmPathError):
    """Invalid settings, environment variables or option values."""


class DataError(GlmPathError):
    """Invalid matrices, weights, responses or input files.

    ``row``/``column`` coordinates are attached to ``details`` when known.
    """


class FamilyError(GlmPathError):
    """Unknown link/variance combination or family domain violation."""


class FitError(GlmPathError):
    """A fit cannot be carried out (undefined lambda_max, no failures, no usable folds)."""
