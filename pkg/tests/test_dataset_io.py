import json

import pytest

from panelforge import (
    Conversation,
    ConversationStatus,
    Critique,
    FormatError,
    ReviewSet,
    Turn,
    ValidationError,
    conversation_to_sharegpt,
    export_conversations,
    load_conversations,
    load_seeds,
    load_templates,
    write_manifest,
)
from panelforge.dataset_io import scan_dialogue_file, scan_seed_file

from conftest import make_run_config


def test_load_alpaca_array(tmp_path):
    path = tmp_path / "alpaca.json"
    path.write_text(
        json.dumps(
            [
                {"instruction": "Give three tips for staying healthy.", "input": "", "output": "1.Eat well."},
                {"instruction": "Translate.", "input": "Good morning.", "output": "Bonjour."},
            ]
        ),
        encoding="utf-8",
    )
    seeds = load_seeds(str(path))
    assert len(seeds) == 2
    assert all(seed.response for seed in seeds)
    assert seeds[1].instruction == "Translate.\n\nGood morning."


def test_load_jsonl_instruction_only(tmp_path):
    path = tmp_path / "seeds.jsonl"
    path.write_text('{"instruction": "Why is the sky blue?"}\n', encoding="utf-8")
    seeds = load_seeds(str(path))
    assert seeds[0].response is None


def test_load_jsonl_malformed_line_names_line_number(tmp_path):
    path = tmp_path / "seeds.jsonl"
    path.write_text('{"instruction": "fine"}\n{broken\n', encoding="utf-8")
    with pytest.raises(FormatError) as exc_info:
        load_seeds(str(path))
    assert exc_info.value.line == 2
    assert "line 2" in str(exc_info.value)


def test_load_seeds_empty_file_rejected(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("", encoding="utf-8")
    with pytest.raises(FormatError):
        load_seeds(str(path))


def test_load_seeds_duplicate_id_rejected(tmp_path):
    path = tmp_path / "seeds.jsonl"
    path.write_text('{"id": "x", "instruction": "a"}\n{"id": "x", "instruction": "b"}\n', encoding="utf-8")
    with pytest.raises(ValidationError) as exc_info:
        load_seeds(str(path))
    assert exc_info.value.code == "duplicate_id"


def test_load_seeds_source_tag(tmp_path):
    path = tmp_path / "seeds.jsonl"
    path.write_text('{"instruction": "q"}\n', encoding="utf-8")
    seeds = load_seeds(str(path), source_tag="alpaca-v1")
    assert seeds[0].source_tag == "alpaca-v1"


def _reviews():
    return ReviewSet((Critique("reviewer-1", "shallow"),))


def _complete_conversation(seed_id="s1", turn_count=2):
    turns = tuple(
        Turn(i, f"question {i}", f"answer {i}", _reviews() if i < turn_count - 1 else None)
        for i in range(turn_count)
    )
    return Conversation(seed_id, turns, ConversationStatus.COMPLETE)


def test_sharegpt_record_alternates_and_orders_keys():
    record = conversation_to_sharegpt(_complete_conversation())
    assert list(record) == ["id", "conversations"]
    assert [message["from"] for message in record["conversations"]] == ["human", "gpt", "human", "gpt"]
    assert record["conversations"][0]["value"] == "question 0"


def test_failed_conversation_never_exports(tmp_path):
    failed = Conversation("s1", (), ConversationStatus.FAILED, failure_reason="candidate@turn0: timeout")
    with pytest.raises(ValidationError) as exc_info:
        conversation_to_sharegpt(failed)
    assert exc_info.value.code == "failed_conversation_in_export"
    with pytest.raises(ValidationError):
        export_conversations([failed], str(tmp_path / "out.jsonl"))


def test_export_round_trip(tmp_path):
    conversations = [_complete_conversation("s1", 2), _complete_conversation("s2", 3)]
    path = tmp_path / "out.jsonl"
    assert export_conversations(conversations, str(path)) == 2
    loaded = load_conversations(str(path))
    assert [record.id for record in loaded] == ["s1", "s2"]
    assert loaded[0].pairs == (("question 0", "answer 0"), ("question 1", "answer 1"))
    assert len(loaded[1].pairs) == 3


def test_export_never_leaks_reviews_or_think(tmp_path):
    conversation = Conversation(
        "s1",
        (
            Turn(0, "q0", "a0", ReviewSet((Critique("reviewer-1", "UNIQUE-CRITIQUE-MARKER"),))),
            Turn(1, "q1", "a1"),
        ),
        ConversationStatus.COMPLETE,
    )
    path = tmp_path / "out.jsonl"
    export_conversations([conversation], str(path))
    data = path.read_bytes()
    assert b"<think>" not in data
    assert b"<criticize>" not in data
    assert b"UNIQUE-CRITIQUE-MARKER" not in data
    assert b"reviews" not in data


def test_load_conversations_rejects_bad_alternation(tmp_path):
    path = tmp_path / "broken.jsonl"
    record = {"id": "x", "conversations": [{"from": "gpt", "value": "a"}, {"from": "human", "value": "q"}]}
    path.write_text(json.dumps(record) + "\n", encoding="utf-8")
    with pytest.raises(FormatError) as exc_info:
        load_conversations(str(path))
    assert exc_info.value.code == "bad_alternation"
    assert exc_info.value.line == 1


def test_load_conversations_rejects_odd_length(tmp_path):
    path = tmp_path / "odd.jsonl"
    record = {"id": "x", "conversations": [{"from": "human", "value": "q"}]}
    path.write_text(json.dumps(record) + "\n", encoding="utf-8")
    with pytest.raises(FormatError):
        load_conversations(str(path))


def test_load_conversations_empty_file(tmp_path):
    path = tmp_path / "none.jsonl"
    path.write_text("\n", encoding="utf-8")
    with pytest.raises(FormatError) as exc_info:
        load_conversations(str(path))
    assert exc_info.value.code == "empty_file"


def test_scan_seed_file_collects_multiple_violations(tmp_path):
    path = tmp_path / "seeds.jsonl"
    path.write_text(
        '{"instruction": ""}\n{"id": "x", "instruction": "ok"}\n{"id": "x", "instruction": "dup"}\n',
        encoding="utf-8",
    )
    violations = scan_seed_file(str(path))
    assert len(violations) == 2
    assert "record 1" in violations[0]
    assert "duplicate" in violations[1]


def test_scan_dialogue_file_ok_and_broken(tmp_path):
    good = tmp_path / "good.jsonl"
    export_conversations([_complete_conversation()], str(good))
    assert scan_dialogue_file(str(good)) == []

    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "x", "conversations": []}\nnot json\n', encoding="utf-8")
    violations = scan_dialogue_file(str(bad))
    assert len(violations) == 2


def test_non_ascii_content_round_trips(tmp_path):
    conversation = Conversation(
        "s-unicode",
        (
            Turn(0, "请用三句话概括这本书。", "这本书讲述了时间、记忆与遗忘。✨", _reviews()),
            Turn(1, "¿Y en español?", "Trata del tiempo y la memoria. 📚"),
        ),
        ConversationStatus.COMPLETE,
    )
    path = tmp_path / "unicode.jsonl"
    export_conversations([conversation], str(path))
    raw = path.read_text(encoding="utf-8")
    assert "请用三句话概括这本书。" in raw  # not \u-escaped
    loaded = load_conversations(str(path))
    assert loaded[0].pairs[0] == ("请用三句话概括这本书。", "这本书讲述了时间、记忆与遗忘。✨")
    assert loaded[0].pairs[1][1].endswith("📚")


def test_manifest_is_deterministic_and_complete(tmp_path):
    cfg = make_run_config(total_turns=3, reviewer_count=2)
    hashes = load_templates().hashes()
    first, second = tmp_path / "m1.json", tmp_path / "m2.json"
    write_manifest(str(first), cfg, hashes, seed_count=10)
    write_manifest(str(second), cfg, hashes, seed_count=10)
    assert first.read_bytes() == second.read_bytes()

    manifest = json.loads(first.read_text())
    assert manifest["total_turns"] == 3
    assert manifest["reviewer_count"] == 2
    assert manifest["roles"]["chairman"]["model_name"] == "chairman-model"
    assert len(manifest["roles"]["reviewers"]) == 2
    assert set(manifest["templates"]) == set(hashes)
    assert manifest["seed_count"] == 10
