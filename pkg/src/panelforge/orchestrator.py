"""Dialogue synthesis loop and batch runner.

One dialogue grows from a single seed through repeated cycles: the candidate
answers the current question, the reviewer panel critiques the answer in
parallel, and the chairman turns those critiques into the next question.
Seeds that already carry a response skip straight to the review of that
response; instruction-only seeds start with the candidate answering. The
final turn is left unreviewed so every exported dialogue ends on an answer
rather than a dangling follow-up question.

Batches run dialogues on a bounded worker pool and stream results out in
seed input order, checkpointing each seed as its record hits disk so an
interrupted run can resume without duplicating output.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Optional, Sequence

from .agents import (
    TemplateLibrary,
    build_candidate_messages,
    build_chairman_messages,
    build_reviewer_messages,
    extract_action,
)
from .dataset_io import conversation_to_sharegpt
from .errors import BackendError, DialogueFailed, FormatError, ParseError, ValidationError
from .gateway import CallContext, ChatMessage, CompletionRequest, Gateway, RoleKind
from .types import (
    AgentProfile,
    Conversation,
    ConversationStatus,
    Critique,
    ReviewSet,
    RunConfig,
    SeedInstruction,
    Turn,
    TurnOrigin,
)

logger = logging.getLogger(__name__)


def _agent_manifest(cfg: RunConfig) -> dict[str, str]:
    manifest = {
        "chairman": cfg.chairman.model_name,
        "candidate": cfg.candidate.model_name,
    }
    for position, profile in enumerate(cfg.reviewers, start=1):
        manifest[f"reviewer-{position}"] = profile.model_name
    return manifest


def _agent_step(
    gateway: Gateway,
    cfg: RunConfig,
    *,
    role: str,
    role_kind: RoleKind,
    profile: AgentProfile,
    messages: tuple[ChatMessage, ...],
    seed_id: str,
    turn_index: int,
) -> str:
    """One logical agent call: gateway completion plus protocol extraction.

    Unparseable completions are re-sampled with the identical prompt up to
    cfg.max_parse_retries extra times; attempt numbers continue across both
    transient and parse retries via the call log."""
    stage = f"{role}@turn{turn_index}"
    context = CallContext(role=role, role_kind=role_kind, seed_id=seed_id, turn_index=turn_index)
    last_parse_error: Optional[ParseError] = None
    for _ in range(cfg.max_parse_retries + 1):
        base_attempt = gateway.log.count_step(role, seed_id, turn_index)
        request = CompletionRequest(
            messages=messages,
            model_name=profile.model_name,
            temperature=profile.temperature,
            max_output_tokens=profile.max_output_tokens,
            request_id=gateway.next_request_id(),
        )
        try:
            raw = gateway.complete(request, profile.backend_id, context, base_attempt=base_attempt)
        except BackendError as error:
            attempts = gateway.log.count_step(role, seed_id, turn_index)
            code = "backend_permanent" if not error.retryable else "timeout"
            raise DialogueFailed(code, str(error), stage=stage, attempts=attempts) from error
        try:
            return extract_action(raw, role_kind)
        except ParseError as error:
            gateway.log.mark_parse_rejected(request.request_id)
            logger.debug("parse rejected for %s (%s)", stage, error)
            last_parse_error = error
    attempts = gateway.log.count_step(role, seed_id, turn_index)
    raise DialogueFailed(
        "parse_retries_exhausted",
        f"gave up after {attempts} attempts: {last_parse_error}",
        stage=stage,
        attempts=attempts,
    )


def _respond(gateway, cfg, templates: TemplateLibrary, history: Sequence[Turn], question: str, seed_id: str, turn_index: int) -> str:
    messages = build_candidate_messages(
        templates.candidate, history, question, word_limit=cfg.candidate.word_limit
    )
    return _agent_step(
        gateway,
        cfg,
        role="candidate",
        role_kind=RoleKind.CANDIDATE,
        profile=cfg.candidate,
        messages=messages,
        seed_id=seed_id,
        turn_index=turn_index,
    )


def _review(gateway, cfg, templates: TemplateLibrary, history: Sequence[Turn], question: str, answer: str, seed_id: str, turn_index: int) -> ReviewSet:
    """Fan the answer out to every reviewer concurrently; critiques come back
    in configured reviewer order regardless of completion order."""

    def one_review(position: int, profile: AgentProfile) -> Critique:
        role = f"reviewer-{position}"
        messages = build_reviewer_messages(
            templates.reviewer, history, question, answer, word_limit=profile.word_limit
        )
        text = _agent_step(
            gateway,
            cfg,
            role=role,
            role_kind=RoleKind.REVIEWER,
            profile=profile,
            messages=messages,
            seed_id=seed_id,
            turn_index=turn_index,
        )
        return Critique(reviewer_id=role, text=text)

    if cfg.reviewer_count == 1:
        return ReviewSet((one_review(1, cfg.reviewers[0]),))
    with ThreadPoolExecutor(max_workers=cfg.reviewer_count) as pool:
        futures = [
            pool.submit(one_review, position, profile)
            for position, profile in enumerate(cfg.reviewers, start=1)
        ]
        return ReviewSet(tuple(future.result() for future in futures))


def _ask(gateway, cfg, templates: TemplateLibrary, history: Sequence[Turn], reviews: ReviewSet, seed_id: str, turn_index: int) -> str:
    messages = build_chairman_messages(
        templates.chairman, history, reviews, word_limit=cfg.chairman.word_limit
    )
    return _agent_step(
        gateway,
        cfg,
        role="chairman",
        role_kind=RoleKind.CHAIRMAN,
        profile=cfg.chairman,
        messages=messages,
        seed_id=seed_id,
        turn_index=turn_index,
    )


def _synthesize_turns(
    seed: SeedInstruction,
    cfg: RunConfig,
    gateway: Gateway,
    templates: TemplateLibrary,
    turns: list[Turn],
) -> None:
    """Grow ``turns`` in place until cfg.total_turns (Q, A) pairs exist."""
    if seed.response is None:
        question = seed.instruction
        origin = TurnOrigin.SEED
        start_index = 0
    else:
        # Pre-existing response: skip straight to reviewing it.
        if cfg.total_turns == 1:
            turns.append(Turn(0, seed.instruction, seed.response, None, TurnOrigin.SEED))
            return
        answer = seed.response
        reviews = _review(gateway, cfg, templates, [], seed.instruction, answer, seed.id, 0)
        turns.append(Turn(0, seed.instruction, answer, reviews, TurnOrigin.SEED))
        question = _ask(gateway, cfg, templates, turns, reviews, seed.id, 0)
        origin = TurnOrigin.CHAIRMAN
        start_index = 1

    for turn_index in range(start_index, cfg.total_turns):
        answer = _respond(gateway, cfg, templates, turns, question, seed.id, turn_index)
        if turn_index == cfg.total_turns - 1:
            turns.append(Turn(turn_index, question, answer, None, origin))
            return
        reviews = _review(gateway, cfg, templates, turns, question, answer, seed.id, turn_index)
        turns.append(Turn(turn_index, question, answer, reviews, origin))
        question = _ask(gateway, cfg, templates, turns, reviews, seed.id, turn_index)
        origin = TurnOrigin.CHAIRMAN


def run_dialogue_detailed(
    seed: SeedInstruction,
    cfg: RunConfig,
    gateway: Gateway,
    templates: TemplateLibrary,
) -> tuple[Conversation, Optional[DialogueFailed]]:
    """Run one dialogue, returning the conversation plus failure details."""
    turns: list[Turn] = []
    manifest = _agent_manifest(cfg)
    try:
        _synthesize_turns(seed, cfg, gateway, templates, turns)
    except DialogueFailed as failure:
        logger.warning("dialogue %s failed at %s: %s", seed.id, failure.stage, failure)
        conversation = Conversation(
            seed_id=seed.id,
            turns=tuple(turns),
            status=ConversationStatus.FAILED,
            failure_reason=f"{failure.stage}: {failure.code}: {failure.message}",
            agent_manifest=manifest,
        )
        return conversation, failure
    conversation = Conversation(
        seed_id=seed.id,
        turns=tuple(turns),
        status=ConversationStatus.COMPLETE,
        agent_manifest=manifest,
    )
    return conversation, None


def run_dialogue(
    seed: SeedInstruction,
    cfg: RunConfig,
    gateway: Gateway,
    templates: TemplateLibrary,
) -> Conversation:
    """Synthesize one multi-turn conversation from a seed (never raises for
    per-dialogue failures; inspect .status)."""
    return run_dialogue_detailed(seed, cfg, gateway, templates)[0]


@dataclass
class BatchSummary:
    completed: int = 0
    failed: int = 0
    skipped_resumed: int = 0
    error_counts: dict[str, int] = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "completed": self.completed,
            "failed": self.failed,
            "skipped_resumed": self.skipped_resumed,
            "error_counts": dict(sorted(self.error_counts.items())),
        }


def load_checkpoint_ids(checkpoint_path: str) -> set[str]:
    """Seed ids recorded as complete in an earlier run's checkpoint."""
    completed: set[str] = set()
    if not os.path.exists(checkpoint_path):
        return completed
    with open(checkpoint_path, "r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as error:
                raise FormatError("bad_checkpoint", str(error), line=line_number) from error
            if record.get("status") == "complete":
                completed.add(str(record.get("seed_id")))
    return completed


def _utc_now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def run_batch(
    seeds: Sequence[SeedInstruction],
    cfg: RunConfig,
    gateway: Gateway,
    templates: TemplateLibrary,
    *,
    out_path: str,
    checkpoint_path: str,
    failure_log_path: str,
) -> BatchSummary:
    """Synthesize a batch of dialogues with bounded concurrency.

    Complete conversations append to ``out_path`` (one ShareGPT-style JSON
    object per line, in seed input order); every finished seed appends to the
    checkpoint, and failures append structured records to the failure log.
    Seeds checkpointed as complete by a previous run are skipped."""
    ids = [seed.id for seed in seeds]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate_id", "seed ids must be unique within a batch")

    completed_before = load_checkpoint_ids(checkpoint_path)
    summary = BatchSummary()
    pending: list[SeedInstruction] = []
    for seed in seeds:
        if seed.id in completed_before:
            summary.skipped_resumed += 1
        else:
            pending.append(seed)

    if not pending:
        return summary

    with ThreadPoolExecutor(max_workers=cfg.concurrency_limit) as pool:
        futures: list[tuple[SeedInstruction, Future]] = [
            (seed, pool.submit(run_dialogue_detailed, seed, cfg, gateway, templates))
            for seed in pending
        ]
        with open(out_path, "a", encoding="utf-8") as out_handle, open(
            checkpoint_path, "a", encoding="utf-8"
        ) as checkpoint_handle, open(failure_log_path, "a", encoding="utf-8") as failure_handle:
            # Drain in input order so the output file is always an ordered
            # prefix of the full export; unwritten completions simply re-run
            # after an interruption.
            for seed, future in futures:
                conversation, failure = future.result()
                if conversation.status is ConversationStatus.COMPLETE:
                    out_handle.write(
                        json.dumps(conversation_to_sharegpt(conversation), ensure_ascii=False) + "\n"
                    )
                    out_handle.flush()
                    summary.completed += 1
                    status = "complete"
                else:
                    assert failure is not None
                    failure_handle.write(
                        json.dumps(
                            {
                                "seed_id": seed.id,
                                "stage": failure.stage,
                                "error": f"{failure.code}: {failure.message}",
                                "attempts": failure.attempts,
                            },
                            ensure_ascii=False,
                        )
                        + "\n"
                    )
                    failure_handle.flush()
                    summary.failed += 1
                    summary.error_counts[failure.code] = summary.error_counts.get(failure.code, 0) + 1
                    status = "failed"
                checkpoint_handle.write(
                    json.dumps(
                        {"seed_id": seed.id, "status": status, "timestamp": _utc_now_iso()},
                        ensure_ascii=False,
                    )
                    + "\n"
                )
                checkpoint_handle.flush()
    return summary
