"""Per-role prompt assembly and action extraction.

Prompt wording is data, not code: each role's system text, few-shot turns,
and action guide live in a template file (``templates/*.txt``) so the exact
wording is versioned, diffable, and overridable per run. This module loads
those files and renders the chat message lists each agent receives.

Dialogue-direction routing (broaden the topic after positive reviews, drill
into weaknesses after negative ones) is carried entirely by the chairman's
prompt text; there is deliberately no code-level sentiment branch.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence, Union

from .actions import ActionKind, parse_actions, strip_think
from .errors import ConfigError, ValidationError
from .gateway import ChatMessage, RoleKind
from .types import ReviewSet, Turn

ROLE_REQUIRED_ACTION = {
    RoleKind.CHAIRMAN: ActionKind.ASK,
    RoleKind.CANDIDATE: ActionKind.RESPOND,
    RoleKind.REVIEWER: ActionKind.CRITICIZE,
}

WORD_LIMIT_PLACEHOLDER = "{word_limit}"

_SECTION_HEADER_RE = re.compile(r"^\[([a-z_][a-z0-9_.]*)\]\s*$")


@dataclass(frozen=True)
class RoleTemplate:
    """One role's prompt material: system text, few-shot turns, action guide."""

    role_kind: RoleKind
    system_text: str
    few_shot: tuple[ChatMessage, ...]
    action_guide_text: str
    required_action: ActionKind
    source_hash: str

    def __post_init__(self) -> None:
        expected = ROLE_REQUIRED_ACTION.get(self.role_kind)
        if expected is None:
            raise ConfigError("bad_value", f"{self.role_kind.value} has no role template")
        if self.required_action is not expected:
            raise ConfigError(
                "bad_value",
                f"{self.role_kind.value} template must require <{expected.tag}>, "
                f"got <{self.required_action.tag}>",
            )
        if WORD_LIMIT_PLACEHOLDER not in self.action_guide_text:
            raise ConfigError(
                "bad_value",
                f"{self.role_kind.value} action guide is missing the {WORD_LIMIT_PLACEHOLDER} clause",
            )

    def render_guide(self, word_limit: int) -> str:
        return self.action_guide_text.format(word_limit=word_limit)


@dataclass(frozen=True)
class PromptTemplate:
    """A single-message prompt file rendered with str.format semantics."""

    name: str
    text: str
    source_hash: str

    def render(self, **values: str) -> str:
        return self.text.format(**values)


@dataclass(frozen=True)
class TemplateLibrary:
    """Every template a run needs, with content hashes for the manifest."""

    chairman: RoleTemplate
    candidate: RoleTemplate
    reviewer: RoleTemplate
    difficulty_judge: PromptTemplate
    tagger: PromptTemplate
    direction_judge: PromptTemplate

    def role(self, role_kind: RoleKind) -> RoleTemplate:
        return {
            RoleKind.CHAIRMAN: self.chairman,
            RoleKind.CANDIDATE: self.candidate,
            RoleKind.REVIEWER: self.reviewer,
        }[role_kind]

    def hashes(self) -> dict[str, str]:
        return {
            "chairman": self.chairman.source_hash,
            "candidate": self.candidate.source_hash,
            "reviewer": self.reviewer.source_hash,
            "difficulty_judge": self.difficulty_judge.source_hash,
            "tagger": self.tagger.source_hash,
            "direction_judge": self.direction_judge.source_hash,
        }


def _read_template_file(name: str, template_dir: Optional[Union[str, Path]]) -> str:
    if template_dir is not None:
        path = Path(template_dir) / name
        if not path.exists():
            raise ConfigError("missing_key", f"template file not found: {path}")
        return path.read_text(encoding="utf-8")
    return (resources.files(__package__) / "templates" / name).read_text(encoding="utf-8")


def parse_template_sections(text: str) -> list[tuple[str, str]]:
    """Split a sectioned template file into ordered (name, body) pairs."""
    sections: list[tuple[str, str]] = []
    current: Optional[str] = None
    body_lines: list[str] = []
    for line in text.splitlines():
        header = _SECTION_HEADER_RE.match(line)
        if header:
            if current is not None:
                sections.append((current, "\n".join(body_lines).strip()))
            current = header.group(1)
            body_lines = []
        elif current is None:
            if line.strip():
                raise ConfigError("bad_value", f"template content before first section: {line!r}")
        else:
            body_lines.append(line)
    if current is not None:
        sections.append((current, "\n".join(body_lines).strip()))
    return sections


def _role_template_from_text(role_kind: RoleKind, text: str) -> RoleTemplate:
    sections = parse_template_sections(text)
    named = {name: body for name, body in sections}
    for required_section in ("system", "action_guide"):
        if required_section not in named:
            raise ConfigError("missing_key", f"{role_kind.value} template is missing [{required_section}]")
    few_shot: list[ChatMessage] = []
    for name, body in sections:
        if name.startswith("few_shot."):
            speaker = name.split(".", 1)[1]
            if speaker not in ("user", "assistant"):
                raise ConfigError("bad_value", f"unknown few-shot speaker {speaker!r}")
            few_shot.append(ChatMessage(speaker, body))
    return RoleTemplate(
        role_kind=role_kind,
        system_text=named["system"],
        few_shot=tuple(few_shot),
        action_guide_text=named["action_guide"],
        required_action=ROLE_REQUIRED_ACTION[role_kind],
        source_hash=hashlib.sha256(text.encode("utf-8")).hexdigest(),
    )


def load_role_template(role_kind: RoleKind, template_dir: Optional[Union[str, Path]] = None) -> RoleTemplate:
    text = _read_template_file(f"{role_kind.value}.txt", template_dir)
    return _role_template_from_text(role_kind, text)


def load_prompt_template(name: str, template_dir: Optional[Union[str, Path]] = None) -> PromptTemplate:
    text = _read_template_file(f"{name}.txt", template_dir)
    return PromptTemplate(name=name, text=text, source_hash=hashlib.sha256(text.encode("utf-8")).hexdigest())


def load_templates(template_dir: Optional[Union[str, Path]] = None) -> TemplateLibrary:
    return TemplateLibrary(
        chairman=load_role_template(RoleKind.CHAIRMAN, template_dir),
        candidate=load_role_template(RoleKind.CANDIDATE, template_dir),
        reviewer=load_role_template(RoleKind.REVIEWER, template_dir),
        difficulty_judge=load_prompt_template("difficulty_judge", template_dir),
        tagger=load_prompt_template("tagger", template_dir),
        direction_judge=load_prompt_template("direction_judge", template_dir),
    )


def build_candidate_messages(
    template: RoleTemplate,
    history: Sequence[Turn],
    question: str,
    *,
    word_limit: int,
) -> tuple[ChatMessage, ...]:
    """Candidate view: prior questions as user turns, prior answers as its own."""
    if not question.strip():
        raise ValidationError("empty_instruction", "candidate question must be nonempty")
    messages = [ChatMessage.system(template.system_text), *template.few_shot]
    for turn in history:
        messages.append(ChatMessage.user(turn.instruction))
        messages.append(ChatMessage.assistant(turn.answer))
    messages.append(ChatMessage.user(template.render_guide(word_limit) + "\n" + question))
    return tuple(messages)


def build_reviewer_messages(
    template: RoleTemplate,
    history: Sequence[Turn],
    question: str,
    answer: str,
    *,
    word_limit: int,
) -> tuple[ChatMessage, ...]:
    """Reviewer view: the panel speaks the questions, so questions render as
    assistant turns and answers as user turns; the answer under review rides
    in the final action-guide message."""
    if not answer.strip():
        raise ValidationError("empty_answer", "reviewer needs a nonempty answer to assess")
    if not question.strip():
        raise ValidationError("empty_instruction", "reviewer needs the question under review")
    messages = [ChatMessage.system(template.system_text), *template.few_shot]
    for turn in history:
        messages.append(ChatMessage.assistant(turn.instruction))
        messages.append(ChatMessage.user(turn.answer))
    messages.append(ChatMessage.assistant(question))
    messages.append(ChatMessage.user(template.render_guide(word_limit) + "\n" + answer))
    return tuple(messages)


def format_committee_comments(reviews: ReviewSet) -> str:
    """Critiques as "Judge i: <text>" lines, in configured reviewer order."""
    return "\n".join(
        f"Judge {position}: {critique.text}" for position, critique in enumerate(reviews.critiques, start=1)
    )


def build_chairman_messages(
    template: RoleTemplate,
    history: Sequence[Turn],
    reviews: Optional[ReviewSet],
    *,
    word_limit: int,
) -> tuple[ChatMessage, ...]:
    """Chairman view: full dialogue so far, then the committee's comments.

    The chairman's own prompt forbids asking without comments, so an absent
    or empty review set is rejected here rather than sent."""
    if reviews is None or not reviews.critiques:
        raise ValidationError("empty_review_set", "chairman needs at least one panel comment")
    if not history:
        raise ValidationError("bad_turn_index", "chairman needs at least the turn under review")
    messages = [ChatMessage.system(template.system_text), *template.few_shot]
    for turn in history:
        messages.append(ChatMessage.user(turn.instruction))
        messages.append(ChatMessage.assistant(turn.answer))
    messages.append(
        ChatMessage.user(template.render_guide(word_limit) + "\n" + format_committee_comments(reviews))
    )
    return tuple(messages)


def extract_action(raw: str, role_kind: RoleKind) -> str:
    """Pull the role's required action body out of a completion.

    Think content is stripped first and never returned. ParseError propagates
    so the orchestrator can re-sample."""
    required = ROLE_REQUIRED_ACTION.get(role_kind)
    if required is None:
        raise ConfigError("bad_value", f"{role_kind.value} does not emit tagged actions")
    actions = strip_think(parse_actions(raw, required))
    return actions[required]
