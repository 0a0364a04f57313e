"""Exception hierarchy shared across the package."""


class PolldistError(Exception):
    """Base class for all package errors."""


class DatasetError(PolldistError):
    """Malformed input file or broken referential integrity."""


class NoDataError(PolldistError):
    """No usable responses for a (group, question) pair."""

    def __init__(self, message, group=None, question_id=None):
        super().__init__(message)
        self.group = group
        self.question_id = question_id


class MetricError(PolldistError):
    """Misaligned or otherwise invalid metric inputs."""


class PromptError(PolldistError):
    """Prompt construction failed (missing steering text, bad few-shot input)."""


class ParseError(PolldistError):
    """Model output could not be parsed into a distribution."""

    def __init__(self, message, snippet=""):
        super().__init__(message)
        self.snippet = snippet


class TransportError(PolldistError):
    """HTTP/protocol failure after retries."""


class CapabilityError(PolldistError):
    """Endpoint response lacks the information we need (e.g. no logprobs)."""


class DegenerateGapError(PolldistError):
    """Relative improvement undefined: zero-shot does not beat the lower bound."""


class EvaluationError(PolldistError):
    """Every (group, question) pair failed during an evaluation run."""


class ConfigError(PolldistError):
    """Invalid run configuration."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
