"""Exception taxonomy shared across the toolkit.

Every failure surfaced to callers is a subclass of ArrError, so CLI and
service layers can catch one base type and map it to an exit code or an
HTTP status. Subclasses exist wherever callers need to distinguish
failure kinds programmatically.
"""

from __future__ import annotations


class ArrError(Exception):
    """Base class for all toolkit errors."""


class CorpusError(ArrError):
    """Corpus file is unreadable, empty, or malformed."""


class MalformedRecordError(CorpusError):
    """A corpus/queries/gold line is not a valid record; carries the line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class DuplicateIdError(CorpusError):
    """Two records share an id."""

    def __init__(self, record_id: int):
        super().__init__(f"duplicate id {record_id}")
        self.record_id = record_id


class EmptyCorpusError(CorpusError):
    """Corpus file contained no records."""


class BankFormatError(ArrError):
    """Bank vector file has bad magic bytes or is truncated/oversized."""


class BankConsistencyError(ArrError):
    """Vector file and paragraph sidecar disagree (counts or ids)."""


class DimensionMismatchError(ArrError):
    """A vector's dimension does not match what the consumer expects."""


class TransportError(ArrError):
    """HTTP request failed (network error or non-2xx status) after retries."""


class MalformedResponseError(ArrError):
    """Remote endpoint returned a body that does not match the wire contract."""


class CountMismatchError(ArrError):
    """Remote embedding endpoint returned a different number of vectors than requested."""


class EmptyResponseError(ArrError):
    """Model returned an empty completion where text was required."""


class BudgetExceededError(ArrError):
    """Prompt cannot fit the token budget even with all evidence dropped."""


class PipelineStageError(ArrError):
    """A pipeline stage failed; carries the stage name and round index."""

    def __init__(self, stage: str, round_index: int, cause: Exception):
        super().__init__(f"stage '{stage}' failed (round {round_index}): {cause}")
        self.stage = stage
        self.round_index = round_index
        self.cause = cause
