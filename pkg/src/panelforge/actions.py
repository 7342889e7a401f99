"""Action-tag protocol: the grammar every agent completion must follow.

Agents wrap each action in its own tag pair on the wire:

    <think>hidden planning</think><ask>the follow-up question</ask>

Grammar rules implemented here:

* four kinds: ``think``, ``ask``, ``respond``, ``criticize``; tag names are
  matched case-insensitively, bodies are kept verbatim (trimmed);
* text outside tags is ignored, as is a markdown fence wrapping the whole
  message;
* a second occurrence of the same kind keeps the first body and records a
  structured warning (maximizes yield from imperfect models);
* an unclosed tag or a same-kind tag nested inside its own body is a typed
  ParseError — truncation is handled by retrying upstream, never repaired here.

``parse_actions`` never raises anything but ParseError, for any input string.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Mapping, Optional

from .errors import ParseError


class ActionKind(Enum):
    THINK = "think"
    ASK = "ask"
    RESPOND = "respond"
    CRITICIZE = "criticize"

    @property
    def tag(self) -> str:
        """Wire-form tag name (lowercase)."""
        return self.value


_KIND_ORDER = {kind: position for position, kind in enumerate(ActionKind)}
_OPEN_TAG_RE = re.compile(r"<(think|ask|respond|criticize)>", re.IGNORECASE)


@dataclass(frozen=True)
class ParseWarning:
    """Non-fatal protocol deviation noticed while parsing."""

    kind: str
    tag: str
    detail: str


@dataclass(frozen=True)
class ActionSet:
    """The actions extracted from one agent completion, at most one per kind.

    Warnings ride along for logging but do not participate in equality, so a
    render/parse round trip compares equal.
    """

    entries: tuple[tuple[ActionKind, str], ...]
    warnings: tuple[ParseWarning, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        kinds = [kind for kind, _ in self.entries]
        if len(set(kinds)) != len(kinds):
            raise ParseError("duplicate_kind", "an ActionSet holds at most one entry per kind")
        for kind, body in self.entries:
            if body != body.strip() or not body:
                raise ParseError("empty_tag_body", f"<{kind.tag}> body must be nonempty and trimmed")
        ordered = tuple(sorted(self.entries, key=lambda entry: _KIND_ORDER[entry[0]]))
        object.__setattr__(self, "entries", ordered)

    @classmethod
    def of(cls, actions: Mapping[ActionKind, str], warnings: tuple[ParseWarning, ...] = ()) -> "ActionSet":
        return cls(tuple(actions.items()), warnings)

    def as_dict(self) -> dict[ActionKind, str]:
        return dict(self.entries)

    def get(self, kind: ActionKind) -> Optional[str]:
        for entry_kind, body in self.entries:
            if entry_kind is kind:
                return body
        return None

    def __getitem__(self, kind: ActionKind) -> str:
        body = self.get(kind)
        if body is None:
            raise KeyError(kind)
        return body

    def __contains__(self, kind: object) -> bool:
        return any(entry_kind is kind for entry_kind, _ in self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[ActionKind]:
        return iter(kind for kind, _ in self.entries)


def strip_markdown_fence(text: str) -> str:
    """Drop a ``` fence wrapping the whole message, if present."""
    trimmed = text.strip()
    if not trimmed.startswith("```"):
        return text
    first_newline = trimmed.find("\n")
    if first_newline == -1 or not trimmed.endswith("```") or len(trimmed) < first_newline + 4:
        return text
    return trimmed[first_newline + 1 : -3].strip()


def parse_actions(raw: str, required: Optional[ActionKind] = None) -> ActionSet:
    """Extract all well-formed tag spans from one completion.

    Scans left to right; each open tag must be closed by its own closer before
    another open tag of the same kind appears. Raises ParseError with code
    missing_required_tag, empty_tag_body, unterminated_tag, or
    malformed_nesting.
    """
    text = strip_markdown_fence(raw)
    found: dict[ActionKind, str] = {}
    warnings: list[ParseWarning] = []
    position = 0
    while True:
        opened = _OPEN_TAG_RE.search(text, position)
        if opened is None:
            break
        kind = ActionKind(opened.group(1).lower())
        body_start = opened.end()
        closer = re.compile(f"</{kind.tag}>", re.IGNORECASE).search(text, body_start)
        if closer is None:
            raise ParseError("unterminated_tag", f"<{kind.tag}> is never closed")
        inner_open = re.compile(f"<{kind.tag}>", re.IGNORECASE).search(text, body_start, closer.start())
        if inner_open is not None:
            raise ParseError("malformed_nesting", f"<{kind.tag}> reopened inside its own body")
        body = text[body_start : closer.start()].strip()
        if not body:
            raise ParseError("empty_tag_body", f"<{kind.tag}> has an empty body")
        if kind in found:
            warnings.append(
                ParseWarning("duplicate_tag", kind.tag, "kept first occurrence, ignored a later duplicate")
            )
        else:
            found[kind] = body
        position = closer.end()
    if required is not None and required not in found:
        raise ParseError("missing_required_tag", f"<{required.tag}> not found in completion")
    return ActionSet.of(found, tuple(warnings))


def strip_think(actions: ActionSet) -> ActionSet:
    """Same set minus the think entry; think content never leaves the agent layer."""
    kept = tuple(entry for entry in actions.entries if entry[0] is not ActionKind.THINK)
    return ActionSet(kept, actions.warnings)


def render_actions(actions: ActionSet) -> str:
    """Wire form of an ActionSet: one ``<tag>body</tag>`` span per entry.

    Re-parsing the result yields an equal ActionSet as long as no body embeds
    its own kind's open or close marker.
    """
    return "\n".join(f"<{kind.tag}>{body}</{kind.tag}>" for kind, body in actions.entries)
