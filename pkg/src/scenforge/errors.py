"""Exception hierarchy shared by all pipeline stages."""

from __future__ import annotations


class ScenforgeError(Exception):
    """Base class for every error raised by the package."""


class InputError(ScenforgeError):
    """Bad user input (maps to CLI exit code 2)."""


class ConfigError(ScenforgeError):
    """Missing or invalid configuration (maps to CLI exit code 3)."""


class InvariantViolation(InputError):
    def __init__(self, invariant: str, detail: str = ""):
        self.invariant = invariant
        self.detail = detail
        super().__init__(f"{invariant}: {detail}" if detail else invariant)


class ParseError(InputError):
    def __init__(self, line: int, reason: str):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class SchemaError(InputError):
    def __init__(self, position: str, reason: str):
        self.position = position
        self.reason = reason
        super().__init__(f"{position}: {reason}")


class EmptyProject(InputError):
    pass


class NotFound(InputError):
    pass


# LLM gateway


class ProviderError(ScenforgeError):
    def __init__(self, message: str, retryable: bool = False):
        self.retryable = retryable
        super().__init__(message)


class ReplayMiss(ScenforgeError):
    def __init__(self, request_digest: str, tag: str = ""):
        self.request_digest = request_digest
        self.tag = tag
        super().__init__(f"no transcript entry for request {request_digest[:16]} (tag={tag!r})")


class MalformedOutput(ScenforgeError):
    def __init__(self, schema_id: str, reason: str, after_retries: int = 0):
        self.schema_id = schema_id
        self.reason = reason
        self.after_retries = after_retries
        super().__init__(f"{schema_id}: {reason} (after {after_retries} retries)")


# pipeline stages


class ZeroCandidates(ScenforgeError):
    pass


class RunnerUnavailable(ScenforgeError):
    pass


class TimeoutExceeded(ScenforgeError):
    pass


class ContextOverflow(ScenforgeError):
    pass


class QueryBudgetExceeded(ScenforgeError):
    pass


class GenerationFailure(ScenforgeError):
    """Template generation produced output that does not form a valid template."""


class NoValidBundles(ScenforgeError):
    pass


class ChoiceOutOfRange(InputError):
    pass


class EmptyTrainSplit(InputError):
    pass


class EmptyGroundTruthKillSet(ScenforgeError):
    pass
