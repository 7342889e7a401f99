"""Exception hierarchy shared by all panelforge modules.

Every exception carries a machine-readable ``code`` (snake_case) next to the
human-readable message so callers can branch without string matching.
"""

from __future__ import annotations


class PanelForgeError(Exception):
    """Base class for all errors raised by this package."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


class ValidationError(PanelForgeError):
    """A domain invariant was violated.

    Codes: empty_instruction, empty_response, empty_answer, duplicate_id,
    empty_review_set, duplicate_reviewer_id, bad_turn_index, bad_status,
    empty_dataset, empty_round, failed_conversation_in_export, bad_config.
    """


class ParseError(PanelForgeError):
    """An agent completion did not follow the expected output protocol.

    Codes: missing_required_tag, empty_tag_body, unterminated_tag,
    malformed_nesting, bad_judge_json, bad_tagger_output.
    """


class BackendError(PanelForgeError):
    """A completion backend failed.

    Codes: transient (retryable), timeout (retryable), permanent.
    """

    @property
    def retryable(self) -> bool:
        return self.code in ("transient", "timeout")


class ConfigError(PanelForgeError):
    """Bad run configuration: codes duplicate_key, missing_key, bad_value."""


class FormatError(PanelForgeError):
    """A data file is structurally malformed.

    ``line`` is the 1-based line (JSONL) or record index (JSON arrays)
    where the problem was found, when known.
    """

    def __init__(self, code: str, message: str, *, line: int | None = None):
        super().__init__(code, message if line is None else f"line {line}: {message}")
        self.line = line


class DialogueFailed(PanelForgeError):
    """A dialogue could not be completed after exhausting its retry budget.

    Codes: parse_retries_exhausted, backend_permanent, timeout.
    ``stage`` names the failing step (e.g. "respond@turn1"), ``attempts``
    counts the gateway calls spent on that step.
    """

    def __init__(
        self,
        code: str,
        message: str,
        *,
        stage: str,
        attempts: int,
    ):
        super().__init__(code, message)
        self.stage = stage
        self.attempts = attempts
