"""Exception hierarchy shared by every dialseg module."""

from __future__ import annotations


class DialsegError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(DialsegError, ValueError):
    """A value violates a domain invariant (bad boundary, bad shape, ...)."""


class NormalizationError(ValidationError):
    """Raw boundary indices could not be normalized; ``raw`` keeps the payload."""

    def __init__(self, message: str, raw=None):
        super().__init__(message)
        self.raw = raw


class ParseError(DialsegError, ValueError):
    """An input file or byte payload could not be parsed.

    ``line`` is the 1-based line number when the format is line oriented.
    """

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        prefix = ""
        if source:
            prefix += f"{source}: "
        if line is not None:
            prefix += f"line {line}: "
        super().__init__(prefix + message)
        self.line = line
        self.source = source


class UndefinedDistributionError(DialsegError, ValueError):
    """A segment has no labeled utterances and unlabeled mass is excluded."""


class BoundaryParseError(DialsegError, ValueError):
    """An LLM completion did not carry a usable boundary payload.

    The raw response is kept on the exception for audit logs.
    """

    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


class AnnotationParseError(DialsegError, ValueError):
    def __init__(self, message: str, offenders=(), raw: str = ""):
        super().__init__(message)
        self.offenders = list(offenders)
        self.raw = raw


class SegmentationFailed(DialsegError):
    """All attempts to obtain a segmentation for one session failed."""

    def __init__(self, session_id: str, attempts: int, last_error: Exception | None = None):
        super().__init__(
            f"segmentation failed for session {session_id!r} after {attempts} attempt(s): {last_error}"
        )
        self.session_id = session_id
        self.attempts = attempts
        self.last_error = last_error


class LlmRequestError(DialsegError):
    """Transport-level failure talking to the chat-completion endpoint."""


class ConfigError(DialsegError, ValueError):
    pass


class InfeasibleSpecError(DialsegError, ValueError):
    """A synthetic-corpus spec cannot be realized."""
