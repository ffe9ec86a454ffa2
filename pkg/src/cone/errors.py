"""Exception types shared across the toolkit."""

from __future__ import annotations


class ConeError(Exception):
    """Base class for all toolkit errors."""


class CorpusFormatError(ConeError):
    """A collection artifact (run, qrels, nugget file, ...) is malformed.

    Carries the 1-based line number for line-oriented formats.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(ConeError):
    """An evaluation config references missing files or inconsistent options."""


class GatewayError(ConeError):
    """Base class for inference-backend failures."""


class TransportError(GatewayError):
    """The backend endpoint could not be reached after bounded retries."""


class BackendReplyError(GatewayError):
    """The backend replied, but the reply is unusable (bad status, bad shape, empty)."""


class SpanValidationError(ConeError):
    """Strict-mode extraction met a completion line that is not a span of the source."""


class DedupBackendError(GatewayError):
    """Deduplication aborted on a backend failure; the input set is preserved unmodified."""

    def __init__(self, message: str, original: object):
        super().__init__(message)
        self.original = original


class UndefinedMetricError(ConeError):
    """A metric is undefined for this turn (e.g. empty gold set); exclude from means."""
