"""Exception hierarchy. CLI exit codes are derived from these classes."""

from __future__ import annotations


class ReqPCError(Exception):
    exit_code = 1


class ConfigError(ReqPCError, ValueError):
    exit_code = 1


class ValidationError(ReqPCError, ValueError):
    """A record or file violated a type invariant.

    ``problems`` holds one human-readable entry per violation so callers can
    report every failure in a file instead of only the first.
    """

    exit_code = 3

    def __init__(self, message: str, problems: list[str] | None = None):
        super().__init__(message)
        self.problems = list(problems or [])


class ParseError(ValidationError):
    """Model output could not be turned into validated records."""


class ProviderError(ReqPCError):
    exit_code = 2


class TransportError(ProviderError):
    """Retryable network/service failure."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class ProviderRefusal(ProviderError):
    pass


class BudgetExceeded(ProviderError):
    pass


class TemplateError(ConfigError):
    pass


class PipelineStageError(ReqPCError):
    """Wraps a failure inside one pipeline stage with the stage and req it hit."""

    def __init__(self, stage: str, req_id: str, cause: BaseException):
        super().__init__(f"[{stage}] req {req_id}: {cause}")
        self.stage = stage
        self.req_id = req_id
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
