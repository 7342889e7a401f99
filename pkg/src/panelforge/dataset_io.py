"""Seed ingestion, dialogue export, and run manifests.

Input formats: an Alpaca-style JSON array (instruction/input/output keys) or
JSONL with one instruction record per line. Output format: ShareGPT-style
JSONL, one ``{"id": ..., "conversations": [{"from": "human"|"gpt",
"value": ...}, ...]}`` object per line, strictly alternating and starting
with "human". UTF-8 with LF endings and fixed key order throughout, so equal
runs produce byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Iterable, Optional

from .errors import FormatError, ValidationError
from .types import Conversation, ConversationStatus, SeedInstruction, validate_seed, validate_seed_batch

SEED_FORMAT_ALPACA = "alpaca"
SEED_FORMAT_JSONL = "jsonl"
SEED_FORMAT_AUTO = "auto"


def _sniff_format(path: str) -> str:
    with open(path, "r", encoding="utf-8") as handle:
        for chunk in iter(lambda: handle.read(4096), ""):
            stripped = chunk.lstrip()
            if stripped:
                return SEED_FORMAT_ALPACA if stripped[0] == "[" else SEED_FORMAT_JSONL
    raise FormatError("empty_file", f"{path} is empty")


def load_seeds(path: str, fmt: str = SEED_FORMAT_AUTO, *, source_tag: str = "") -> list[SeedInstruction]:
    """Read and validate a seed file, preserving file order."""
    if fmt == SEED_FORMAT_AUTO:
        fmt = _sniff_format(path)
    if fmt == SEED_FORMAT_ALPACA:
        raws = _load_alpaca(path)
    elif fmt == SEED_FORMAT_JSONL:
        raws = _load_jsonl_records(path)
    else:
        raise ValidationError("bad_config", f"unknown seed format {fmt!r}")
    if source_tag:
        raws = [{**raw, "source_tag": raw.get("source_tag") or source_tag} for raw in raws]
    return validate_seed_batch(raws)


def _load_alpaca(path: str) -> list[dict[str, Any]]:
    with open(path, "r", encoding="utf-8") as handle:
        try:
            payload = json.load(handle)
        except json.JSONDecodeError as error:
            raise FormatError("bad_json", str(error), line=error.lineno) from error
    if not isinstance(payload, list):
        raise FormatError("bad_json", f"{path}: expected a top-level JSON array")
    records = []
    for position, item in enumerate(payload, start=1):
        if not isinstance(item, dict):
            raise FormatError("bad_record", "record is not a JSON object", line=position)
        records.append(item)
    if not records:
        raise FormatError("empty_file", f"{path} holds no records")
    return records


def _load_jsonl_records(path: str) -> list[dict[str, Any]]:
    records = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                item = json.loads(line)
            except json.JSONDecodeError as error:
                raise FormatError("bad_json", str(error), line=line_number) from error
            if not isinstance(item, dict):
                raise FormatError("bad_record", "record is not a JSON object", line=line_number)
            records.append(item)
    if not records:
        raise FormatError("empty_file", f"{path} holds no records")
    return records


def conversation_to_sharegpt(conversation: Conversation) -> dict[str, Any]:
    """Training-data view of a conversation: Q/A pairs only.

    Reviews and any think-tag content live in other structures and never
    reach this record."""
    if conversation.status is not ConversationStatus.COMPLETE:
        raise ValidationError(
            "failed_conversation_in_export",
            f"conversation {conversation.seed_id} is {conversation.status.value}, not exportable",
        )
    messages: list[dict[str, str]] = []
    for turn in conversation.turns:
        messages.append({"from": "human", "value": turn.instruction})
        messages.append({"from": "gpt", "value": turn.answer})
    return {"id": conversation.seed_id, "conversations": messages}


def export_conversations(conversations: Iterable[Conversation], path: str) -> int:
    """Write complete conversations as ShareGPT JSONL; returns lines written."""
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for conversation in conversations:
            handle.write(json.dumps(conversation_to_sharegpt(conversation), ensure_ascii=False) + "\n")
            count += 1
    return count


@dataclass(frozen=True)
class DialogueRecord:
    """One exported dialogue read back: id plus ordered (question, answer) pairs."""

    id: str
    pairs: tuple[tuple[str, str], ...]


def parse_sharegpt_record(item: Any, *, line: Optional[int] = None) -> DialogueRecord:
    if not isinstance(item, dict) or "conversations" not in item or "id" not in item:
        raise FormatError("bad_record", "expected an object with 'id' and 'conversations'", line=line)
    messages = item["conversations"]
    if not isinstance(messages, list) or not messages:
        raise FormatError("bad_record", "'conversations' must be a nonempty array", line=line)
    if len(messages) % 2 != 0:
        raise FormatError("bad_alternation", "dialogue must end on a gpt message", line=line)
    pairs: list[tuple[str, str]] = []
    for pair_index in range(0, len(messages), 2):
        human, gpt = messages[pair_index], messages[pair_index + 1]
        if not isinstance(human, dict) or human.get("from") != "human":
            raise FormatError("bad_alternation", f"message {pair_index} must be from 'human'", line=line)
        if not isinstance(gpt, dict) or gpt.get("from") != "gpt":
            raise FormatError("bad_alternation", f"message {pair_index + 1} must be from 'gpt'", line=line)
        question, answer = human.get("value"), gpt.get("value")
        if not isinstance(question, str) or not question.strip():
            raise FormatError("bad_record", f"message {pair_index} has no text", line=line)
        if not isinstance(answer, str) or not answer.strip():
            raise FormatError("bad_record", f"message {pair_index + 1} has no text", line=line)
        pairs.append((question, answer))
    return DialogueRecord(id=str(item["id"]), pairs=tuple(pairs))


def load_conversations(path: str) -> list[DialogueRecord]:
    """Read a ShareGPT JSONL export back, validating structure per line."""
    records: list[DialogueRecord] = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                item = json.loads(line)
            except json.JSONDecodeError as error:
                raise FormatError("bad_json", str(error), line=line_number) from error
            records.append(parse_sharegpt_record(item, line=line_number))
    if not records:
        raise FormatError("empty_file", f"{path} holds no dialogues")
    return records


def write_manifest(
    path: str,
    cfg,
    template_hashes: dict[str, str],
    *,
    seed_count: Optional[int] = None,
) -> None:
    """Record what a run was configured to do (no timestamps: manifests from
    identical runs must be byte-identical)."""
    manifest = {
        "concurrency_limit": cfg.concurrency_limit,
        "max_parse_retries": cfg.max_parse_retries,
        "reviewer_count": cfg.reviewer_count,
        "roles": {
            "candidate": _profile_record(cfg.candidate),
            "chairman": _profile_record(cfg.chairman),
            "difficulty_judge": _profile_record(cfg.difficulty_judge) if cfg.difficulty_judge else None,
            "reviewers": [_profile_record(profile) for profile in cfg.reviewers],
            "tagger": _profile_record(cfg.tagger) if cfg.tagger else None,
        },
        "seed_count": seed_count,
        "templates": dict(sorted(template_hashes.items())),
        "total_turns": cfg.total_turns,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(manifest, handle, ensure_ascii=False, indent=2, sort_keys=True)
        handle.write("\n")


def _profile_record(profile) -> dict[str, Any]:
    return {
        "backend_id": profile.backend_id,
        "max_output_tokens": profile.max_output_tokens,
        "model_name": profile.model_name,
        "temperature": profile.temperature,
        "word_limit": profile.word_limit,
    }


def scan_seed_file(path: str, fmt: str = SEED_FORMAT_AUTO) -> list[str]:
    """Collect seed-file violations instead of failing on the first one."""
    violations: list[str] = []
    try:
        if fmt == SEED_FORMAT_AUTO:
            fmt = _sniff_format(path)
        raws = _load_alpaca(path) if fmt == SEED_FORMAT_ALPACA else _load_jsonl_records(path)
    except (FormatError, ValidationError) as error:
        return [str(error)]
    seen_ids: set[str] = set()
    for position, raw in enumerate(raws, start=1):
        try:
            seed = validate_seed(raw)
        except ValidationError as error:
            violations.append(f"record {position}: {error}")
            continue
        if seed.id in seen_ids:
            violations.append(f"record {position}: duplicate_id: duplicate seed id {seed.id!r}")
        seen_ids.add(seed.id)
    return violations


def scan_dialogue_file(path: str) -> list[str]:
    """Collect dialogue-file violations instead of failing on the first one."""
    violations: list[str] = []
    any_records = False
    try:
        with open(path, "r", encoding="utf-8") as handle:
            for line_number, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                any_records = True
                try:
                    item = json.loads(line)
                except json.JSONDecodeError as error:
                    violations.append(f"line {line_number}: bad_json: {error}")
                    continue
                try:
                    parse_sharegpt_record(item, line=line_number)
                except FormatError as error:
                    violations.append(str(error))
    except OSError as error:
        return [str(error)]
    if not any_records:
        violations.append(f"{path} holds no dialogues")
    return violations


def read_jsonl(path: str) -> list[dict[str, Any]]:
    """Small helper for logs and checkpoints (skips blank lines)."""
    records = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as error:
                raise FormatError("bad_json", str(error), line=line_number) from error
    return records
