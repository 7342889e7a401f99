import json
import threading
from concurrent.futures import ThreadPoolExecutor

import pytest

from panelforge import (
    BackendError,
    BackendLimits,
    CallContext,
    CallLog,
    CallOutcome,
    ChatMessage,
    CompletionRequest,
    ConfigError,
    RetryPolicy,
    RoleKind,
    ValidationError,
    script_mock,
)

from conftest import make_gateway


def _request(request_id="req-000001", content="hello"):
    return CompletionRequest(
        messages=(ChatMessage.user(content),),
        model_name="test-model",
        temperature=0.0,
        max_output_tokens=64,
        request_id=request_id,
    )


def _context(role="candidate", seed_id="s1", turn_index=0):
    return CallContext(role=role, role_kind=RoleKind.CANDIDATE, seed_id=seed_id, turn_index=turn_index)


def test_chat_message_validation():
    with pytest.raises(ValidationError):
        ChatMessage.user("   ")
    with pytest.raises(ValidationError):
        ChatMessage("narrator", "x")
    assert ChatMessage.assistant("").content == ""


def test_completion_request_rejects_misplaced_system():
    with pytest.raises(ValidationError):
        CompletionRequest(
            messages=(ChatMessage.user("q"), ChatMessage.system("sys")),
            model_name="m",
            temperature=0.0,
            max_output_tokens=8,
            request_id="r",
        )


def test_scripted_echo():
    backend = script_mock({("candidate", "s1", 0, None): "<respond>hello</respond>"})
    gateway = make_gateway(backend)
    text = gateway.complete(_request(), "mock", _context())
    assert text == "<respond>hello</respond>"
    records = gateway.log.records()
    assert len(records) == 1
    assert records[0].outcome is CallOutcome.OK


def test_scripted_miss_is_permanent_and_names_key():
    backend = script_mock({("candidate", "s1", 0, None): "x"})
    gateway = make_gateway(backend)
    with pytest.raises(BackendError) as exc_info:
        gateway.complete(_request(), "mock", _context(seed_id="other"))
    assert exc_info.value.code == "permanent"
    assert "other" in str(exc_info.value)
    assert len(gateway.log.records()) == 1


def test_script_mock_duplicate_pair_keys_rejected():
    pairs = [(("candidate", "s1", 0, 0), "a"), (("candidate", "s1", 0, 0), "b")]
    with pytest.raises(ConfigError) as exc_info:
        script_mock(pairs)
    assert exc_info.value.code == "duplicate_key"


def test_reviewer_token_falls_back_to_generic():
    backend = script_mock({("reviewer", "s1", 0, None): "<criticize>meh</criticize>"})
    gateway = make_gateway(backend)
    context = CallContext(role="reviewer-2", role_kind=RoleKind.REVIEWER, seed_id="s1", turn_index=0)
    assert gateway.complete(_request(), "mock", context) == "<criticize>meh</criticize>"


def test_specific_reviewer_key_wins_over_generic():
    backend = script_mock(
        {
            ("reviewer", "s1", 0, None): "generic",
            ("reviewer-2", "s1", 0, None): "specific",
        }
    )
    gateway = make_gateway(backend)
    context = CallContext(role="reviewer-2", role_kind=RoleKind.REVIEWER, seed_id="s1", turn_index=0)
    assert gateway.complete(_request(), "mock", context) == "specific"


def test_transient_twice_then_success_yields_three_records():
    backend = script_mock(
        {
            ("candidate", "s1", 0, 0): BackendError("transient", "HTTP 429"),
            ("candidate", "s1", 0, 1): BackendError("transient", "HTTP 429"),
            ("candidate", "s1", 0, 2): "recovered",
        }
    )
    gateway = make_gateway(backend)
    assert gateway.complete(_request(), "mock", _context()) == "recovered"
    outcomes = [record.outcome for record in gateway.log.records()]
    assert outcomes == [CallOutcome.TRANSIENT_ERROR, CallOutcome.TRANSIENT_ERROR, CallOutcome.OK]
    assert [record.attempt for record in gateway.log.records()] == [0, 1, 2]


def test_permanent_error_fails_immediately_with_one_record():
    backend = script_mock({("candidate", "s1", 0, 0): BackendError("permanent", "bad auth")})
    gateway = make_gateway(backend)
    with pytest.raises(BackendError) as exc_info:
        gateway.complete(_request(), "mock", _context())
    assert exc_info.value.code == "permanent"
    assert len(gateway.log.records()) == 1


def test_retry_cap_respected_when_all_transient():
    backend = script_mock({("candidate", "s1", 0, None): BackendError("transient", "HTTP 503")})
    gateway = make_gateway(backend, retry=RetryPolicy(max_attempts=3))
    with pytest.raises(BackendError):
        gateway.complete(_request(), "mock", _context())
    records = gateway.log.records()
    assert len(records) == 3
    assert all(record.outcome is CallOutcome.TRANSIENT_ERROR for record in records)


def test_backoff_delays_grow_and_cap():
    policy = RetryPolicy(max_attempts=6, base_delay_s=1.0, max_delay_s=4.0, jitter_fraction=0.0)
    delays = [policy.delay_before(n, 0.0) for n in range(1, 6)]
    assert delays == [1.0, 2.0, 4.0, 4.0, 4.0]
    jittered = RetryPolicy(jitter_fraction=0.5).delay_before(1, 1.0)
    assert jittered == pytest.approx(1.5)


def test_sleeper_called_between_transient_retries():
    sleeps = []
    backend = script_mock(
        {
            ("candidate", "s1", 0, 0): BackendError("transient", "x"),
            ("candidate", "s1", 0, 1): "fine",
        }
    )
    gateway = make_gateway(backend, sleeper=sleeps.append)
    gateway.complete(_request(), "mock", _context())
    assert len(sleeps) == 1 and sleeps[0] > 0


def test_timeout_treated_as_transient():
    backend = script_mock(
        {
            ("candidate", "s1", 0, 0): BackendError("timeout", "deadline"),
            ("candidate", "s1", 0, 1): "fine",
        }
    )
    gateway = make_gateway(backend)
    assert gateway.complete(_request(), "mock", _context()) == "fine"


def test_base_attempt_offsets_attempt_numbers():
    backend = script_mock({("candidate", "s1", 0, 5): "late"})
    gateway = make_gateway(backend)
    assert gateway.complete(_request(), "mock", _context(), base_attempt=5) == "late"
    assert gateway.log.records()[0].attempt == 5


def test_in_flight_never_exceeds_limit():
    backend = script_mock({("candidate", None, None, None): "ok"}, latency_s=0.02)
    gateway = make_gateway(backend, limits={"mock": BackendLimits(max_in_flight=2)})

    def one_call(call_number):
        request = _request(request_id=f"r{call_number}")
        return gateway.complete(request, "mock", _context(seed_id=f"s{call_number}"))

    with ThreadPoolExecutor(max_workers=8) as pool:
        results = list(pool.map(one_call, range(8)))
    assert results == ["ok"] * 8
    assert backend.max_in_flight_observed <= 2


def test_unlimited_backend_overlaps():
    backend = script_mock({("candidate", None, None, None): "ok"}, latency_s=0.05)
    gateway = make_gateway(backend)
    with ThreadPoolExecutor(max_workers=4) as pool:
        list(pool.map(lambda n: gateway.complete(_request(f"r{n}"), "mock", _context(seed_id=f"s{n}")), range(4)))
    assert backend.max_in_flight_observed >= 2


def test_rate_limiter_spaces_requests():
    clock_value = [0.0]
    sleeps = []

    def clock():
        return clock_value[0]

    def sleeper(seconds):
        sleeps.append(seconds)
        clock_value[0] += seconds

    backend = script_mock({("candidate", None, None, None): "ok"})
    gateway = make_gateway(
        backend,
        limits={"mock": BackendLimits(requests_per_minute=60)},
        clock=clock,
        sleeper=sleeper,
    )
    for call_number in range(3):
        gateway.complete(_request(f"r{call_number}"), "mock", _context(seed_id=f"s{call_number}"))
    # 60 rpm = 1s interval; the second and third calls each wait.
    assert len(sleeps) == 2
    assert all(wait == pytest.approx(1.0) for wait in sleeps)


def test_mock_determinism_across_runs():
    script = {
        ("candidate", "s1", 0, None): "first",
        ("chairman", "s1", 0, None): "second",
    }

    def run_once():
        backend = script_mock(script)
        gateway = make_gateway(backend)
        gateway.complete(_request("r1"), "mock", _context())
        gateway.complete(
            _request("r2"),
            "mock",
            CallContext(role="chairman", role_kind=RoleKind.CHAIRMAN, seed_id="s1", turn_index=0),
        )
        return backend.calls, [(r.role, r.outcome.value, r.attempt) for r in gateway.log.records()]

    assert run_once() == run_once()


def test_request_ids_unique_and_sequential():
    backend = script_mock({("candidate", None, None, None): "ok"})
    gateway = make_gateway(backend)
    ids = {gateway.next_request_id() for _ in range(100)}
    assert len(ids) == 100


def test_call_log_mark_parse_rejected_and_jsonl(tmp_path):
    backend = script_mock({("candidate", "s1", 0, None): "garbled"})
    gateway = make_gateway(backend)
    gateway.complete(_request("req-x"), "mock", _context())
    gateway.log.mark_parse_rejected("req-x")
    assert gateway.log.records()[0].outcome is CallOutcome.PARSE_REJECTED

    log_path = tmp_path / "calls.jsonl"
    written = gateway.log.write_jsonl(str(log_path))
    assert written == 1
    record = json.loads(log_path.read_text().splitlines()[0])
    assert record["outcome"] == "parse_rejected"
    assert record["role_kind"] == "candidate"
    assert record["seed_id"] == "s1"


def test_call_log_thread_safety():
    log = CallLog()
    backend = script_mock({("candidate", None, None, None): "ok"})
    gateway = make_gateway(backend, call_log=log)

    def hammer(worker):
        for call_number in range(25):
            gateway.complete(
                _request(gateway.next_request_id()),
                "mock",
                _context(seed_id=f"w{worker}-{call_number}"),
            )

    threads = [threading.Thread(target=hammer, args=(worker,)) for worker in range(4)]
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join()
    assert len(log) == 100


def test_unknown_backend_id_is_config_error():
    gateway = make_gateway(script_mock({}))
    with pytest.raises(ConfigError):
        gateway.complete(_request(), "nope", _context())


def test_load_script_file_wildcards_and_errors(tmp_path):
    from panelforge import load_script_file

    path = tmp_path / "script.json"
    path.write_text(
        json.dumps(
            {
                "entries": [
                    {"role": "candidate", "seed_id": "s1", "turn_index": 0, "text": "exact"},
                    {"role": "candidate", "text": "fallback"},
                    {"role": "chairman", "error": "transient"},
                ]
            }
        ),
        encoding="utf-8",
    )
    backend = load_script_file(str(path))
    gateway = make_gateway(backend)
    assert gateway.complete(_request(), "mock", _context()) == "exact"
    assert gateway.complete(_request("r2"), "mock", _context(seed_id="s9", turn_index=4)) == "fallback"
    chairman = CallContext(role="chairman", role_kind=RoleKind.CHAIRMAN, seed_id="s1", turn_index=0)
    with pytest.raises(BackendError) as exc_info:
        gateway.complete(_request("r3"), "mock", chairman)
    assert exc_info.value.code == "transient"


def test_load_script_file_rejects_duplicates_and_bad_entries(tmp_path):
    path = tmp_path / "dup.json"
    path.write_text(
        json.dumps(
            {
                "entries": [
                    {"role": "candidate", "text": "a"},
                    {"role": "candidate", "text": "b"},
                ]
            }
        ),
        encoding="utf-8",
    )
    from panelforge import load_script_file

    with pytest.raises(ConfigError) as exc_info:
        load_script_file(str(path))
    assert exc_info.value.code == "duplicate_key"

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"entries": [{"role": "candidate"}]}), encoding="utf-8")
    with pytest.raises(ConfigError):
        load_script_file(str(bad))
    neither = tmp_path / "neither.json"
    neither.write_text(json.dumps({"nope": True}), encoding="utf-8")
    with pytest.raises(ConfigError):
        load_script_file(str(neither))
