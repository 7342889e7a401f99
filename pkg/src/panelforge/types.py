"""Domain types for the dialogue synthesis pipeline.

Pure data layer: no I/O, no network. Everything here is immutable after
construction and safe to share across worker threads.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping, Optional

from .errors import ValidationError


class TurnOrigin(Enum):
    """Where a turn's instruction came from."""

    SEED = "seed"
    CHAIRMAN = "chairman"


class ConversationStatus(Enum):
    COMPLETE = "complete"
    FAILED = "failed"


def seed_content_id(instruction: str, response: Optional[str]) -> str:
    """Stable id for a seed without one: hex digest of its canonical encoding."""
    canonical = json.dumps([instruction, response], ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class SeedInstruction:
    """One input record: an instruction, optionally paired with a response."""

    id: str
    instruction: str
    response: Optional[str] = None
    source_tag: str = ""

    def __post_init__(self) -> None:
        if not self.id.strip():
            raise ValidationError("empty_id", "seed id must be nonempty")
        if not self.instruction.strip():
            raise ValidationError("empty_instruction", "seed instruction must be nonempty")
        if self.response is not None and not self.response.strip():
            raise ValidationError("empty_response", "seed response, when present, must be nonempty")

    def to_record(self) -> dict[str, Any]:
        """Serializable form; feeding it back through validate_seed is a no-op."""
        record: dict[str, Any] = {"id": self.id, "instruction": self.instruction}
        if self.response is not None:
            record["response"] = self.response
        if self.source_tag:
            record["source_tag"] = self.source_tag
        return record


def validate_seed(raw: Mapping[str, Any]) -> SeedInstruction:
    """Normalize one candidate seed record into a SeedInstruction.

    Accepted keys: ``instruction`` (required), ``input`` (Alpaca-style extra
    context, concatenated onto the instruction with a blank line), ``response``
    or ``output``, ``id``, ``source_tag`` or ``source``. Text is whitespace
    trimmed; a missing id is derived from a content hash so repeated runs see
    the same id for the same record.
    """
    instruction = str(raw.get("instruction") or "").strip()
    extra_input = str(raw.get("input") or "").strip()
    if extra_input:
        instruction = f"{instruction}\n\n{extra_input}" if instruction else extra_input
    if not instruction:
        raise ValidationError("empty_instruction", "seed instruction must be nonempty")

    response_raw = raw.get("response")
    if response_raw is None:
        response_raw = raw.get("output")
    response = str(response_raw).strip() if response_raw is not None else None
    if response == "":
        response = None

    raw_id = raw.get("id")
    seed_id = str(raw_id).strip() if raw_id is not None and str(raw_id).strip() else seed_content_id(instruction, response)
    source_tag = str(raw.get("source_tag") or raw.get("source") or "")
    return SeedInstruction(id=seed_id, instruction=instruction, response=response, source_tag=source_tag)


def validate_seed_batch(raws: Iterable[Mapping[str, Any]]) -> list[SeedInstruction]:
    """Validate a whole seed set, rejecting duplicate ids."""
    seeds: list[SeedInstruction] = []
    seen: set[str] = set()
    for raw in raws:
        seed = validate_seed(raw)
        if seed.id in seen:
            raise ValidationError("duplicate_id", f"duplicate seed id {seed.id!r}")
        seen.add(seed.id)
        seeds.append(seed)
    return seeds


@dataclass(frozen=True)
class Critique:
    """One reviewer's verdict on one candidate answer."""

    reviewer_id: str
    text: str

    def __post_init__(self) -> None:
        if not self.reviewer_id.strip():
            raise ValidationError("empty_id", "critique reviewer_id must be nonempty")
        if not self.text.strip():
            raise ValidationError("empty_critique", "critique text must be nonempty")


@dataclass(frozen=True)
class ReviewSet:
    """All critiques attached to one answer, in configured reviewer order."""

    critiques: tuple[Critique, ...]

    def __post_init__(self) -> None:
        if len(self.critiques) < 1:
            raise ValidationError("empty_review_set", "a review set needs at least one critique")
        ids = [c.reviewer_id for c in self.critiques]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate_reviewer_id", f"reviewer ids must be distinct, got {ids}")


@dataclass(frozen=True)
class Turn:
    """One (instruction, answer) pair plus the reviews it received.

    ``reviews`` is None only on a conversation's final turn, where the loop
    stops instead of asking a dangling follow-up.
    """

    index: int
    instruction: str
    answer: str
    reviews: Optional[ReviewSet] = None
    origin: TurnOrigin = TurnOrigin.CHAIRMAN

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValidationError("bad_turn_index", f"turn index must be >= 0, got {self.index}")
        if not self.instruction.strip():
            raise ValidationError("empty_instruction", f"turn {self.index} instruction is empty")
        if not self.answer.strip():
            raise ValidationError("empty_answer", f"turn {self.index} answer is empty")


@dataclass(frozen=True)
class Conversation:
    """An ordered list of turns plus provenance; the unit the pipeline exports.

    Complete conversations satisfy the review pattern (every turn but the last
    reviewed). Failed ones may be partial and are never exported as training
    data; they carry the failure reason for the failure log instead.
    """

    seed_id: str
    turns: tuple[Turn, ...]
    status: ConversationStatus
    failure_reason: Optional[str] = None
    agent_manifest: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for position, turn in enumerate(self.turns):
            if turn.index != position:
                raise ValidationError(
                    "bad_turn_index",
                    f"turn indices must be consecutive from 0, got {turn.index} at position {position}",
                )
        if self.status is ConversationStatus.COMPLETE:
            if not self.turns:
                raise ValidationError("bad_status", "a complete conversation needs at least one turn")
            if self.failure_reason is not None:
                raise ValidationError("bad_status", "complete conversations carry no failure_reason")
            if self.turns[-1].reviews is not None:
                raise ValidationError("bad_status", "the final turn must not carry reviews")
            for turn in self.turns[:-1]:
                if turn.reviews is None:
                    raise ValidationError("bad_status", f"non-final turn {turn.index} is missing reviews")
        else:
            if not (self.failure_reason or "").strip():
                raise ValidationError("bad_status", "failed conversations need a nonempty failure_reason")


@dataclass(frozen=True)
class AgentProfile:
    """Backend and sampling settings for one agent role."""

    backend_id: str
    model_name: str
    temperature: float = 0.7
    max_output_tokens: int = 1024
    word_limit: int = 300

    def __post_init__(self) -> None:
        if not self.backend_id.strip():
            raise ValidationError("bad_config", "backend_id must be nonempty")
        if not self.model_name.strip():
            raise ValidationError("bad_config", "model_name must be nonempty")
        if not (math.isfinite(self.temperature) and self.temperature >= 0.0):
            raise ValidationError("bad_config", f"temperature must be finite and >= 0, got {self.temperature}")
        if self.max_output_tokens <= 0:
            raise ValidationError("bad_config", "max_output_tokens must be > 0")
        if self.word_limit <= 0:
            raise ValidationError("bad_config", "word_limit must be > 0")


@dataclass(frozen=True)
class RunConfig:
    """Global settings for one synthesis run."""

    chairman: AgentProfile
    candidate: AgentProfile
    reviewers: tuple[AgentProfile, ...]
    difficulty_judge: Optional[AgentProfile] = None
    tagger: Optional[AgentProfile] = None
    total_turns: int = 3
    max_parse_retries: int = 3
    concurrency_limit: int = 4

    def __post_init__(self) -> None:
        if self.total_turns < 1:
            raise ValidationError("bad_config", f"total_turns must be >= 1, got {self.total_turns}")
        if len(self.reviewers) < 1:
            raise ValidationError("bad_config", "at least one reviewer profile is required")
        if self.max_parse_retries < 0:
            raise ValidationError("bad_config", "max_parse_retries must be >= 0")
        if self.concurrency_limit < 1:
            raise ValidationError("bad_config", "concurrency_limit must be >= 1")

    @property
    def reviewer_count(self) -> int:
        return len(self.reviewers)
