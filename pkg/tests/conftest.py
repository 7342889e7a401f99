"""Shared fixtures: deterministic scripts for whole dialogues and the
independently-derived conversations they must produce."""

from __future__ import annotations

import pytest

from panelforge import (
    AgentProfile,
    CallLog,
    Gateway,
    RunConfig,
    ScriptedBackend,
    SeedInstruction,
    script_mock,
)


def make_profile(model_name: str = "test-model", backend_id: str = "mock", **kwargs) -> AgentProfile:
    return AgentProfile(backend_id=backend_id, model_name=model_name, **kwargs)


def make_run_config(total_turns: int = 3, reviewer_count: int = 2, **kwargs) -> RunConfig:
    return RunConfig(
        chairman=make_profile("chairman-model"),
        candidate=make_profile("candidate-model"),
        reviewers=tuple(make_profile(f"reviewer-model-{i}") for i in range(1, reviewer_count + 1)),
        total_turns=total_turns,
        **kwargs,
    )


def canned_answer(seed_id: str, turn_index: int) -> str:
    return f"answer for {seed_id} at turn {turn_index}"


def canned_question(seed_id: str, turn_index: int) -> str:
    return f"follow-up for {seed_id} at turn {turn_index}"


def canned_critique(seed_id: str, turn_index: int, reviewer: int) -> str:
    return f"critique of {seed_id} turn {turn_index} by reviewer {reviewer}"


def dialogue_script(seed: SeedInstruction, total_turns: int, reviewer_count: int) -> dict:
    """Canned replies for every step the loop will take for one seed."""
    script = {}
    first_candidate_turn = 0 if seed.response is None else 1
    for turn_index in range(first_candidate_turn, total_turns):
        script[("candidate", seed.id, turn_index, None)] = (
            f"<respond>{canned_answer(seed.id, turn_index)}</respond>"
        )
    for turn_index in range(total_turns - 1):
        for reviewer in range(1, reviewer_count + 1):
            script[(f"reviewer-{reviewer}", seed.id, turn_index, None)] = (
                f"<criticize>{canned_critique(seed.id, turn_index, reviewer)}</criticize>"
            )
        script[("chairman", seed.id, turn_index, None)] = (
            f"<think>weigh the panel</think><ask>{canned_question(seed.id, turn_index + 1)}</ask>"
        )
    return script


def expected_pairs(seed: SeedInstruction, total_turns: int) -> list[tuple[str, str]]:
    """The (question, answer) sequence the scripted dialogue must produce,
    derived straight from the canned-text conventions (not via the pipeline)."""
    pairs = []
    for turn_index in range(total_turns):
        question = seed.instruction if turn_index == 0 else canned_question(seed.id, turn_index)
        if turn_index == 0 and seed.response is not None:
            answer = seed.response
        else:
            answer = canned_answer(seed.id, turn_index)
        pairs.append((question, answer))
    return pairs


def make_gateway(backend: ScriptedBackend, **kwargs) -> Gateway:
    """Gateway wired for tests: no real sleeping between retries."""
    kwargs.setdefault("sleeper", lambda seconds: None)
    kwargs.setdefault("call_log", CallLog())
    return Gateway({"mock": backend}, **kwargs)


@pytest.fixture
def instruction_seed() -> SeedInstruction:
    return SeedInstruction(id="seed-a", instruction="Summarize how tides work.")


@pytest.fixture
def alpaca_seed() -> SeedInstruction:
    return SeedInstruction(
        id="seed-b",
        instruction="Give three tips for staying healthy.",
        response=(
            "1.Eat a balanced diet and make sure to include plenty of fruits and vegetables.\n"
            "2. Exercise regularly to keep your body active and strong.\n"
            "3. Get enough sleep and maintain a consistent sleep schedule."
        ),
    )


def scripted_gateway_for(seeds, total_turns: int, reviewer_count: int, **gateway_kwargs):
    script = {}
    for seed in seeds:
        script.update(dialogue_script(seed, total_turns, reviewer_count))
    backend = script_mock(script)
    return make_gateway(backend, **gateway_kwargs), backend
