"""Exception hierarchy shared across the package.

Every failure that crosses a module boundary is a subclass of NlRewriteError
so the CLI can map config problems to exit code 1 and everything else to 2.
"""

from __future__ import annotations


class NlRewriteError(Exception):
    """Base class for all package errors."""


class ConfigError(NlRewriteError):
    """Bad or missing configuration (file, flag, credential)."""


# dataset

class DatasetParseError(NlRewriteError):
    def __init__(self, message: str, record_index: int | None = None):
        super().__init__(message)
        self.record_index = record_index


class MissingDatabaseError(NlRewriteError):
    def __init__(self, missing_db_ids: list[str]):
        super().__init__(f"question file references databases with no files: {sorted(set(missing_db_ids))}")
        self.missing_db_ids = sorted(set(missing_db_ids))


# gateway

class GatewayError(NlRewriteError):
    """Chat-completion transport failure after retries are exhausted."""


class TranscriptMissError(GatewayError):
    """Scripted backend received a prompt with no transcript entry (a test bug)."""

    def __init__(self, digest: str, preview: str):
        super().__init__(f"no transcript entry for prompt digest {digest}: {preview!r}")
        self.digest = digest


class PayloadError(NlRewriteError):
    """Model output could not be parsed into the required JSON payload."""

    def __init__(self, message: str, raw_content: str):
        super().__init__(message)
        self.raw_content = raw_content


# translator adapters

class TranslatorError(NlRewriteError):
    """Base for translator adapter failures; subclasses carry provenance."""


class TranslatorTimeoutError(TranslatorError):
    pass


class TranslatorProcessError(TranslatorError):
    def __init__(self, message: str, stderr: str = ""):
        super().__init__(message)
        self.stderr = stderr


class TranslatorHttpError(TranslatorError):
    pass


class MissingPredictionError(TranslatorError):
    pass


class EmptySqlError(TranslatorError):
    pass


# agents

class CheckerError(NlRewriteError):
    pass


class ExperienceInitError(NlRewriteError):
    pass


class ReflectionError(NlRewriteError):
    pass


class RewriteError(NlRewriteError):
    pass


class StyleViolationError(RewriteError):
    """Rewriter produced SQL-shaped text instead of natural language."""


class UnknownExperienceError(NlRewriteError):
    """A weight update referenced an experience id not present in the store."""


# memory

class MemoryConflictError(NlRewriteError):
    """Duplicate (round, sample_id) append."""


class SnapshotVersionError(NlRewriteError):
    pass


# eval

class EvalError(NlRewriteError):
    pass


class ReportError(NlRewriteError):
    pass
