"""Dataset analyses: per-round tag novelty and instruction difficulty.

Rounds group instructions by position: round r holds the r-th question of
every dialogue, so round 1 is the seed instructions. The novelty ratio of a
round is the share of the dataset's unique tags that first appear there:

    ratio(r) = |tags(r) - tags(1) - ... - tags(r-1)| / |all unique tags|

Ratios are computed on exact rationals and only converted to floats at the
report boundary. Difficulty is a three-way label per instruction from a
judge model; instructions the judge or tagger cannot label are tallied
separately and excluded from the ratios, keeping the formulas exact on the
labelable subset.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Mapping, Optional, Sequence

from .agents import PromptTemplate
from .errors import ParseError, ValidationError
from .gateway import CallContext, ChatMessage, CompletionRequest, Gateway, RoleKind
from .types import AgentProfile

logger = logging.getLogger(__name__)


class Difficulty(Enum):
    EASY = "easy"
    MEDIUM = "medium"
    HARD = "hard"


class Direction(Enum):
    BREADTH = "breadth"
    DEPTH = "depth"


@dataclass(frozen=True)
class TagSet:
    """Normalized labels for one instruction of one conversation."""

    conversation_id: str
    turn_index: int
    tags: frozenset[str]

    def __post_init__(self) -> None:
        if not self.tags:
            raise ValidationError("empty_tag_set", "a tag set needs at least one tag")
        for tag in self.tags:
            if not tag or tag != tag.strip().lower():
                raise ValidationError("bad_tag", f"tags must be trimmed lowercase, got {tag!r}")


@dataclass(frozen=True)
class DifficultyRecord:
    conversation_id: str
    turn_index: int
    intent: str
    knowledge: str
    difficulty: Difficulty


def normalize_tags(raw_tags: Sequence[object]) -> frozenset[str]:
    """Lowercase, trim, and deduplicate tagger output; drops empties."""
    cleaned = {str(tag).strip().lower() for tag in raw_tags}
    cleaned.discard("")
    return frozenset(cleaned)


def parse_judge_output(text: str) -> tuple[str, str, Difficulty]:
    """Parse the difficulty judge's JSON verdict.

    Accepts the three labels case-insensitively; anything else (including
    prose without a JSON object) is a bad_judge_json ParseError."""
    start, end = text.find("{"), text.rfind("}")
    if start == -1 or end <= start:
        raise ParseError("bad_judge_json", "no JSON object in judge output")
    try:
        payload = json.loads(text[start : end + 1])
    except json.JSONDecodeError as error:
        raise ParseError("bad_judge_json", f"judge output is not valid JSON: {error}") from error
    if not isinstance(payload, dict) or "difficulty" not in payload:
        raise ParseError("bad_judge_json", "judge output lacks a 'difficulty' field")
    label = str(payload["difficulty"]).strip().lower()
    try:
        difficulty = Difficulty(label)
    except ValueError:
        raise ParseError("bad_judge_json", f"difficulty {payload['difficulty']!r} is not easy/medium/hard") from None
    return str(payload.get("intent", "")), str(payload.get("knowledge", "")), difficulty


def parse_tagger_output(text: str) -> frozenset[str]:
    """Parse the tagger's JSON array; an empty tag set is rejected."""
    start, end = text.find("["), text.rfind("]")
    if start == -1 or end <= start:
        raise ParseError("bad_tagger_output", "no JSON array in tagger output")
    try:
        payload = json.loads(text[start : end + 1])
    except json.JSONDecodeError as error:
        raise ParseError("bad_tagger_output", f"tagger output is not valid JSON: {error}") from error
    if not isinstance(payload, list):
        raise ParseError("bad_tagger_output", "tagger output is not a JSON array")
    tags = normalize_tags(payload)
    if not tags:
        raise ParseError("bad_tagger_output", "tagger returned no usable tags")
    return tags


class _SingleMessageCaller:
    """Shared plumbing for judge-style agents: one user message in, text out,
    parse retries against the same prompt."""

    def __init__(
        self,
        gateway: Gateway,
        profile: AgentProfile,
        *,
        role: str,
        role_kind: RoleKind,
        max_retries: int = 2,
    ):
        self._gateway = gateway
        self._profile = profile
        self._role = role
        self._role_kind = role_kind
        self._max_retries = max_retries

    def call(self, prompt: str, conversation_id: str, turn_index: int, parse):
        context = CallContext(
            role=self._role, role_kind=self._role_kind, seed_id=conversation_id, turn_index=turn_index
        )
        messages = (ChatMessage.user(prompt),)
        for _ in range(self._max_retries + 1):
            base_attempt = self._gateway.log.count_step(self._role, conversation_id, turn_index)
            request = CompletionRequest(
                messages=messages,
                model_name=self._profile.model_name,
                temperature=self._profile.temperature,
                max_output_tokens=self._profile.max_output_tokens,
                request_id=self._gateway.next_request_id(),
            )
            raw = self._gateway.complete(request, self._profile.backend_id, context, base_attempt=base_attempt)
            try:
                return parse(raw)
            except ParseError as error:
                self._gateway.log.mark_parse_rejected(request.request_id)
                logger.debug("%s output rejected for %s/%s: %s", self._role, conversation_id, turn_index, error)
        return None


class DifficultyJudge:
    """Labels instructions easy/medium/hard with a temperature-0 judge model."""

    def __init__(self, gateway: Gateway, profile: AgentProfile, template: PromptTemplate, *, max_retries: int = 2):
        self._template = template
        self._caller = _SingleMessageCaller(
            gateway, profile, role="judge", role_kind=RoleKind.JUDGE, max_retries=max_retries
        )

    def render_prompt(self, instruction: str) -> str:
        return self._template.render(input=instruction)

    def classify(self, instruction: str, *, conversation_id: str, turn_index: int) -> Optional[DifficultyRecord]:
        """None means unclassified: the judge never produced a usable verdict."""
        if not instruction.strip():
            raise ValidationError("empty_instruction", "cannot classify an empty instruction")
        parsed = self._caller.call(self.render_prompt(instruction), conversation_id, turn_index, parse_judge_output)
        if parsed is None:
            return None
        intent, knowledge, difficulty = parsed
        return DifficultyRecord(
            conversation_id=conversation_id,
            turn_index=turn_index,
            intent=intent,
            knowledge=knowledge,
            difficulty=difficulty,
        )


class InstructionTagger:
    """Labels instructions with normalized topical tags via a tagging model."""

    def __init__(self, gateway: Gateway, profile: AgentProfile, template: PromptTemplate, *, max_retries: int = 2):
        self._template = template
        self._caller = _SingleMessageCaller(
            gateway, profile, role="tagger", role_kind=RoleKind.TAGGER, max_retries=max_retries
        )

    def render_prompt(self, instruction: str) -> str:
        return self._template.render(input=instruction)

    def tag(self, instruction: str, *, conversation_id: str, turn_index: int) -> Optional[TagSet]:
        """None means untagged: the tagger never produced a usable tag list."""
        if not instruction.strip():
            raise ValidationError("empty_instruction", "cannot tag an empty instruction")
        tags = self._caller.call(self.render_prompt(instruction), conversation_id, turn_index, parse_tagger_output)
        if tags is None:
            return None
        return TagSet(conversation_id=conversation_id, turn_index=turn_index, tags=tags)


def diversity_by_round(rounds: Mapping[int, Sequence[TagSet]]) -> list[Fraction]:
    """Per-round share of the dataset's unique tags that first appear there.

    Round keys must be contiguous from 1. The ratios partition the tag
    universe, so they sum to exactly 1 whenever any tags exist at all."""
    if not rounds:
        raise ValidationError("empty_dataset", "no rounds to analyze")
    round_indices = sorted(rounds)
    if round_indices != list(range(1, len(round_indices) + 1)):
        raise ValidationError("bad_config", f"round indices must be contiguous from 1, got {round_indices}")
    per_round_tags = [
        frozenset().union(*(tag_set.tags for tag_set in rounds[index])) if rounds[index] else frozenset()
        for index in round_indices
    ]
    universe = frozenset().union(*per_round_tags)
    if not universe:
        raise ValidationError("empty_dataset", "no tags in any round")
    ratios: list[Fraction] = []
    seen: frozenset[str] = frozenset()
    for tags in per_round_tags:
        new = tags - seen
        ratios.append(Fraction(len(new), len(universe)))
        seen = seen | tags
    return ratios


@dataclass(frozen=True)
class RoundDifficulty:
    round_index: int
    easy: int
    medium: int
    hard: int
    unclassified: int

    @property
    def classified(self) -> int:
        return self.easy + self.medium + self.hard

    @property
    def hard_share(self) -> Optional[Fraction]:
        return Fraction(self.hard, self.classified) if self.classified else None


def difficulty_by_round(rounds: Mapping[int, Sequence[Optional[DifficultyRecord]]]) -> list[RoundDifficulty]:
    """Histogram the three labels per round; None entries tally as unclassified."""
    if not rounds:
        raise ValidationError("empty_dataset", "no rounds to analyze")
    round_indices = sorted(rounds)
    if round_indices != list(range(1, len(round_indices) + 1)):
        raise ValidationError("bad_config", f"round indices must be contiguous from 1, got {round_indices}")
    histograms: list[RoundDifficulty] = []
    for index in round_indices:
        records = rounds[index]
        if not records:
            raise ValidationError("empty_round", f"round {index} holds no instructions")
        counts = {Difficulty.EASY: 0, Difficulty.MEDIUM: 0, Difficulty.HARD: 0}
        unclassified = 0
        for record in records:
            if record is None:
                unclassified += 1
            else:
                counts[record.difficulty] += 1
        histograms.append(
            RoundDifficulty(
                round_index=index,
                easy=counts[Difficulty.EASY],
                medium=counts[Difficulty.MEDIUM],
                hard=counts[Difficulty.HARD],
                unclassified=unclassified,
            )
        )
    return histograms


@dataclass(frozen=True)
class RoundReport:
    round_index: int
    instructions: int
    new_tag_ratio: Fraction
    easy: int
    medium: int
    hard: int
    unclassified: int
    untagged: int
    hard_share: Optional[Fraction]


@dataclass(frozen=True)
class AnalysisReport:
    rounds: tuple[RoundReport, ...]
    unique_tags: int
    total_instructions: int
    conversations: int

    def to_json_dict(self) -> dict:
        return {
            "rounds": [
                {
                    "round": r.round_index,
                    "instructions": r.instructions,
                    "new_tag_ratio": float(r.new_tag_ratio),
                    "difficulty": {"easy": r.easy, "medium": r.medium, "hard": r.hard},
                    "hard_share": None if r.hard_share is None else float(r.hard_share),
                    "unclassified": r.unclassified,
                    "untagged": r.untagged,
                }
                for r in self.rounds
            ],
            "totals": {
                "conversations": self.conversations,
                "instructions": self.total_instructions,
                "unique_tags": self.unique_tags,
            },
        }

    def to_text_table(self) -> str:
        header = f"{'round':>5}  {'instr':>5}  {'new_tag_ratio':>13}  {'easy':>4}  {'med':>4}  {'hard':>4}  {'uncls':>5}  {'untag':>5}  {'hard_share':>10}"
        lines = [header, "-" * len(header)]
        for r in self.rounds:
            hard_share = "-" if r.hard_share is None else f"{float(r.hard_share):.4f}"
            lines.append(
                f"{r.round_index:>5}  {r.instructions:>5}  {float(r.new_tag_ratio):>13.6f}  "
                f"{r.easy:>4}  {r.medium:>4}  {r.hard:>4}  {r.unclassified:>5}  {r.untagged:>5}  {hard_share:>10}"
            )
        lines.append(
            f"totals: conversations={self.conversations} instructions={self.total_instructions} "
            f"unique_tags={self.unique_tags}"
        )
        return "\n".join(lines)


def analyze_dataset(dialogues, judge: DifficultyJudge, tagger: InstructionTagger) -> AnalysisReport:
    """Tag and grade every instruction of every dialogue, grouped by round.

    ``dialogues`` is a sequence of DialogueRecord (see dataset_io); round r
    holds the r-th question of each dialogue that is long enough."""
    if not dialogues:
        raise ValidationError("empty_dataset", "no dialogues to analyze")
    max_rounds = max(len(dialogue.pairs) for dialogue in dialogues)
    tag_rounds: dict[int, list[TagSet]] = {r: [] for r in range(1, max_rounds + 1)}
    difficulty_rounds: dict[int, list[Optional[DifficultyRecord]]] = {r: [] for r in range(1, max_rounds + 1)}
    untagged: dict[int, int] = {r: 0 for r in range(1, max_rounds + 1)}
    instructions: dict[int, int] = {r: 0 for r in range(1, max_rounds + 1)}
    for dialogue in dialogues:
        for round_index, (question, _answer) in enumerate(dialogue.pairs, start=1):
            turn_index = round_index - 1
            instructions[round_index] += 1
            tag_set = tagger.tag(question, conversation_id=dialogue.id, turn_index=turn_index)
            if tag_set is None:
                untagged[round_index] += 1
            else:
                tag_rounds[round_index].append(tag_set)
            difficulty_rounds[round_index].append(
                judge.classify(question, conversation_id=dialogue.id, turn_index=turn_index)
            )
    ratios = diversity_by_round(tag_rounds)
    histograms = difficulty_by_round(difficulty_rounds)
    universe = frozenset().union(*(t.tags for sets in tag_rounds.values() for t in sets))
    rounds = tuple(
        RoundReport(
            round_index=r,
            instructions=instructions[r],
            new_tag_ratio=ratios[r - 1],
            easy=histograms[r - 1].easy,
            medium=histograms[r - 1].medium,
            hard=histograms[r - 1].hard,
            unclassified=histograms[r - 1].unclassified,
            untagged=untagged[r],
            hard_share=histograms[r - 1].hard_share,
        )
        for r in range(1, max_rounds + 1)
    )
    return AnalysisReport(
        rounds=rounds,
        unique_tags=len(universe),
        total_instructions=sum(instructions.values()),
        conversations=len(dialogues),
    )


def compare_reports(primary: AnalysisReport, other: AnalysisReport) -> dict:
    """Signed per-round deltas (primary minus other) for novelty and hard share."""
    shared = min(len(primary.rounds), len(other.rounds))
    rounds = []
    for position in range(shared):
        a, b = primary.rounds[position], other.rounds[position]
        if a.hard_share is None or b.hard_share is None:
            hard_delta = None
        else:
            hard_delta = float(a.hard_share - b.hard_share)
        rounds.append(
            {
                "round": a.round_index,
                "new_tag_ratio_delta": float(a.new_tag_ratio - b.new_tag_ratio),
                "hard_share_delta": hard_delta,
            }
        )
    return {
        "rounds": rounds,
        "unique_tags_delta": primary.unique_tags - other.unique_tags,
    }


class DirectionJudge:
    """Optional annotator: was a follow-up a breadth move or a depth move?"""

    def __init__(self, gateway: Gateway, profile: AgentProfile, template: PromptTemplate, *, max_retries: int = 1):
        self._template = template
        # Distinct step token: keeps attempt numbering independent of the
        # difficulty judge when both examine the same turn.
        self._caller = _SingleMessageCaller(
            gateway, profile, role="direction", role_kind=RoleKind.JUDGE, max_retries=max_retries
        )

    def annotate(
        self,
        question: str,
        answer: str,
        followup: str,
        reviews_text: str,
        *,
        conversation_id: str,
        turn_index: int,
    ) -> Optional[Direction]:
        """None means unlabeled (the judge answered with neither label)."""
        prompt = self._template.render(
            question=question, answer=answer, followup=followup, reviews=reviews_text
        )
        return self._caller.call(prompt, conversation_id, turn_index, _parse_direction)


def _parse_direction(text: str) -> Direction:
    start, end = text.find("{"), text.rfind("}")
    if start != -1 and end > start:
        try:
            payload = json.loads(text[start : end + 1])
            if isinstance(payload, dict):
                label = str(payload.get("direction", "")).strip().lower()
                if label in ("breadth", "depth"):
                    return Direction(label)
        except json.JSONDecodeError:
            pass
    lowered = text.lower()
    has_breadth, has_depth = "breadth" in lowered, "depth" in lowered
    if has_breadth != has_depth:
        return Direction.BREADTH if has_breadth else Direction.DEPTH
    raise ParseError("bad_judge_json", "direction judge answered with neither label")
