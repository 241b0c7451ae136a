"""Exception hierarchy shared across the toolkit.

Exit-code mapping for the CLI and service lives in one place: configuration
problems are distinguishable from stage failures.
"""

from __future__ import annotations


class VerbkitError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(VerbkitError):
    """Invalid configuration: unknown keys, bad values, missing inputs."""


class VerbalizerError(VerbkitError):
    """Invalid verbalizer construction or mutation."""


class SerdeError(VerbkitError):
    """Malformed serialized verbalizer; message names the offending record."""


class RetrievalError(VerbkitError):
    """Knowledge-base retrieval failed after retries."""

    def __init__(self, message: str, query: str | None = None, status: int | None = None):
        super().__init__(message)
        self.query = query
        self.status = status


class KBParseError(VerbkitError):
    """Knowledge-base response could not be parsed."""


class FilterError(VerbkitError):
    """Semantic filtering could not be applied."""


class BackendError(VerbkitError):
    """Masked-LM backend misuse or unavailable backend."""


class TrainingError(VerbkitError):
    """Training failed or diverged; message carries the diagnostic."""


class IngestError(VerbkitError):
    """Dataset file missing, empty, or carrying unknown labels."""
