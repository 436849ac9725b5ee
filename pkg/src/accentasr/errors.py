"""Exception hierarchy shared by the library and the CLI.

Every error carries a short machine-parsable ``code``; the CLI prints it as a
single ``error: <code>: <message>`` line and exits nonzero.
"""

from __future__ import annotations


class AccentAsrError(Exception):
    """Base class for all errors raised by this package."""

    code = "error"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class ValidationError(AccentAsrError):
    """Invalid argument, spec field, or precondition violation."""

    code = "validation"


class ConfigError(AccentAsrError):
    """Malformed config file, unknown key, or architecture mismatch."""

    code = "config"


class DataError(AccentAsrError):
    """Malformed manifest, feature file, checkpoint, or other artifact."""

    code = "data"


class DecodeError(AccentAsrError):
    """Beam search or pseudo-labeling failure."""

    code = "decode"


class TrainingAbort(AccentAsrError):
    """Non-finite loss or gradient encountered during training."""

    code = "training"


class RecipeError(AccentAsrError):
    """Recipe stage failure; message names the stage and its log path."""

    code = "recipe"
