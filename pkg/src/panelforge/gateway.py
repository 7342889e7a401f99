"""Chat-completion gateway: real HTTP backends and a deterministic scripted mock.

The gateway owns retries (exponential backoff with jitter for transient
failures), per-backend concurrency and rate budgets, and the call log that
records every backend attempt. Parsing happens above this layer; the gateway
moves raw text.
"""

from __future__ import annotations

import itertools
import json
import logging
import os
import random
import re
import threading
import time
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Callable, Iterable, Mapping, Optional, Protocol, Union

import requests

from .errors import BackendError, ConfigError, ValidationError

logger = logging.getLogger(__name__)


class RoleKind(Enum):
    CHAIRMAN = "chairman"
    CANDIDATE = "candidate"
    REVIEWER = "reviewer"
    JUDGE = "judge"
    TAGGER = "tagger"


_VALID_MESSAGE_ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in _VALID_MESSAGE_ROLES:
            raise ValidationError("bad_config", f"unknown message role {self.role!r}")
        if self.role in ("system", "user") and not self.content.strip():
            raise ValidationError("empty_message", f"{self.role} message content must be nonempty")

    @classmethod
    def system(cls, content: str) -> "ChatMessage":
        return cls("system", content)

    @classmethod
    def user(cls, content: str) -> "ChatMessage":
        return cls("user", content)

    @classmethod
    def assistant(cls, content: str) -> "ChatMessage":
        return cls("assistant", content)

    def to_wire(self) -> dict[str, str]:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class CompletionRequest:
    messages: tuple[ChatMessage, ...]
    model_name: str
    temperature: float
    max_output_tokens: int
    request_id: str

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValidationError("bad_config", "a completion request needs at least one message")
        for position, message in enumerate(self.messages):
            if message.role == "system" and position != 0:
                raise ValidationError("bad_config", "at most one system message, and only at the start")


@dataclass(frozen=True)
class CallContext:
    """Which pipeline step a gateway call belongs to.

    ``role`` is the step token ("chairman", "candidate", "reviewer-2",
    "judge", "tagger"); scripted backends key on it.
    """

    role: str
    role_kind: RoleKind
    seed_id: str
    turn_index: int
    attempt: int = 0


class CallOutcome(Enum):
    OK = "ok"
    TRANSIENT_ERROR = "transient_error"
    PERMANENT_ERROR = "permanent_error"
    PARSE_REJECTED = "parse_rejected"


@dataclass(frozen=True)
class CallRecord:
    request_id: str
    role: str
    role_kind: RoleKind
    seed_id: str
    turn_index: int
    attempt: int
    outcome: CallOutcome
    latency_s: float
    backend_id: str
    model_name: str
    detail: str = ""

    def to_record(self) -> dict[str, Any]:
        return {
            "request_id": self.request_id,
            "role": self.role,
            "role_kind": self.role_kind.value,
            "seed_id": self.seed_id,
            "turn_index": self.turn_index,
            "attempt": self.attempt,
            "outcome": self.outcome.value,
            "latency_s": round(self.latency_s, 6),
            "backend_id": self.backend_id,
            "model_name": self.model_name,
            "detail": self.detail,
        }


class CallLog:
    """Append-only, thread-safe record of every backend attempt in a run."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._records: list[CallRecord] = []

    def append(self, record: CallRecord) -> None:
        with self._lock:
            self._records.append(record)

    def records(self) -> tuple[CallRecord, ...]:
        with self._lock:
            return tuple(self._records)

    def filter(
        self,
        *,
        role_kind: Optional[RoleKind] = None,
        role: Optional[str] = None,
        seed_id: Optional[str] = None,
        turn_index: Optional[int] = None,
        outcome: Optional[CallOutcome] = None,
    ) -> list[CallRecord]:
        return [
            record
            for record in self.records()
            if (role_kind is None or record.role_kind is role_kind)
            and (role is None or record.role == role)
            and (seed_id is None or record.seed_id == seed_id)
            and (turn_index is None or record.turn_index == turn_index)
            and (outcome is None or record.outcome is outcome)
        ]

    def count_step(self, role: str, seed_id: str, turn_index: int) -> int:
        """Attempts already spent on one logical step."""
        return len(self.filter(role=role, seed_id=seed_id, turn_index=turn_index))

    def mark_parse_rejected(self, request_id: str) -> None:
        """Reclassify the completed record for ``request_id`` after a parse failure."""
        with self._lock:
            for position in range(len(self._records) - 1, -1, -1):
                record = self._records[position]
                if record.request_id == request_id and record.outcome is CallOutcome.OK:
                    self._records[position] = replace(record, outcome=CallOutcome.PARSE_REJECTED)
                    return

    def write_jsonl(self, path: str) -> int:
        records = self.records()
        with open(path, "w", encoding="utf-8") as handle:
            for record in records:
                handle.write(json.dumps(record.to_record(), ensure_ascii=False) + "\n")
        return len(records)

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)


class Backend(Protocol):
    backend_id: str

    def send(self, request: CompletionRequest, context: CallContext) -> str:
        """Return raw completion text or raise BackendError."""


# Script keys: (role, seed_id, turn_index, attempt); None is a wildcard slot.
ScriptKey = tuple[str, Optional[str], Optional[int], Optional[int]]
ScriptValue = Union[str, BackendError]


class ScriptedBackend:
    """Deterministic backend replaying canned texts keyed by call metadata.

    Lookup tries the most specific key first, widening seed/turn/attempt to
    wildcards, and for "reviewer-<i>" roles falls back to the generic
    "reviewer" token. A miss is a permanent error naming the missing key.
    Canned values may be BackendError instances for fault injection.
    """

    def __init__(
        self,
        script: Mapping[ScriptKey, ScriptValue],
        *,
        backend_id: str = "mock",
        latency_s: float = 0.0,
    ):
        self.backend_id = backend_id
        self._script = dict(script)
        self._latency_s = latency_s
        self._lock = threading.Lock()
        self._in_flight = 0
        self.max_in_flight_observed = 0
        self.calls: list[ScriptKey] = []
        self.requests: list[CompletionRequest] = []

    def _lookup(self, role: str, seed_id: str, turn_index: int, attempt: int) -> ScriptValue:
        role_tokens = [role]
        if role.startswith("reviewer-"):
            role_tokens.append("reviewer")
        for token in role_tokens:
            for key in (
                (token, seed_id, turn_index, attempt),
                (token, seed_id, turn_index, None),
                (token, seed_id, None, None),
                (token, None, None, None),
            ):
                if key in self._script:
                    return self._script[key]
        raise BackendError(
            "permanent",
            f"no scripted reply for role={role!r} seed_id={seed_id!r} "
            f"turn_index={turn_index} attempt={attempt}",
        )

    def send(self, request: CompletionRequest, context: CallContext) -> str:
        with self._lock:
            self._in_flight += 1
            self.max_in_flight_observed = max(self.max_in_flight_observed, self._in_flight)
            self.calls.append((context.role, context.seed_id, context.turn_index, context.attempt))
            self.requests.append(request)
        try:
            if self._latency_s > 0:
                time.sleep(self._latency_s)
            value = self._lookup(context.role, context.seed_id, context.turn_index, context.attempt)
            if isinstance(value, BackendError):
                raise value
            return value
        finally:
            with self._lock:
                self._in_flight -= 1


def script_mock(
    spec: Union[Mapping[ScriptKey, ScriptValue], Iterable[tuple[ScriptKey, ScriptValue]]],
    *,
    backend_id: str = "mock",
    latency_s: float = 0.0,
) -> ScriptedBackend:
    """Build a scripted backend, rejecting duplicate keys in pair-form specs."""
    if isinstance(spec, Mapping):
        script = dict(spec)
    else:
        script = {}
        for key, value in spec:
            if key in script:
                raise ConfigError("duplicate_key", f"duplicate script key {key!r}")
            script[key] = value
    return ScriptedBackend(script, backend_id=backend_id, latency_s=latency_s)


def load_script_file(path: str) -> ScriptedBackend:
    """Read a JSON script file into a scripted backend.

    Format: {"entries": [{"role": ..., "seed_id": ..., "turn_index": ...,
    "attempt": ..., "text": ...}]}. seed_id/turn_index/attempt accept "*"
    (or omission) as a wildcard; "error": "transient"|"permanent"|"timeout"
    replaces "text" for fault injection.
    """
    with open(path, "r", encoding="utf-8") as handle:
        payload = json.load(handle)
    entries = payload.get("entries")
    if not isinstance(entries, list):
        raise ConfigError("bad_value", f"{path}: expected a top-level 'entries' list")
    pairs: list[tuple[ScriptKey, ScriptValue]] = []
    for position, entry in enumerate(entries):
        if not isinstance(entry, dict) or "role" not in entry:
            raise ConfigError("bad_value", f"{path}: entry {position} needs at least a 'role'")

        def slot(name: str, convert: Callable[[Any], Any]) -> Any:
            value = entry.get(name, "*")
            return None if value == "*" else convert(value)

        key: ScriptKey = (
            str(entry["role"]),
            slot("seed_id", str),
            slot("turn_index", int),
            slot("attempt", int),
        )
        if "error" in entry:
            code = str(entry["error"])
            if code not in ("transient", "permanent", "timeout"):
                raise ConfigError("bad_value", f"{path}: entry {position} has unknown error code {code!r}")
            value: ScriptValue = BackendError(code, f"scripted {code} fault")
        elif "text" in entry:
            value = str(entry["text"])
        else:
            raise ConfigError("bad_value", f"{path}: entry {position} needs 'text' or 'error'")
        pairs.append((key, value))
    return script_mock(pairs)


class HttpBackend:
    """POSTs the de-facto ``/chat/completions`` JSON schema over HTTP.

    The API key comes from ``api_key_env`` when set, else from
    ``<BACKEND_ID>_API_KEY`` (non-alphanumerics mapped to underscores); a
    missing key just omits the Authorization header, which suits local
    OpenAI-compatible servers.
    """

    def __init__(
        self,
        backend_id: str,
        base_url: str,
        *,
        api_key_env: Optional[str] = None,
        timeout_s: float = 120.0,
        session: Optional[requests.Session] = None,
    ):
        self.backend_id = backend_id
        self._url = base_url.rstrip("/") + "/chat/completions"
        self._api_key_env = api_key_env or re.sub(r"[^A-Za-z0-9]", "_", backend_id).upper() + "_API_KEY"
        self._timeout_s = timeout_s
        self._session = session or requests.Session()

    def send(self, request: CompletionRequest, context: CallContext) -> str:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self._api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        payload = {
            "model": request.model_name,
            "messages": [message.to_wire() for message in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        try:
            response = self._session.post(self._url, json=payload, headers=headers, timeout=self._timeout_s)
        except requests.Timeout as exc:
            raise BackendError("timeout", f"{self.backend_id}: request timed out") from exc
        except requests.RequestException as exc:
            raise BackendError("transient", f"{self.backend_id}: {exc}") from exc
        if response.status_code == 429 or response.status_code >= 500:
            raise BackendError("transient", f"{self.backend_id}: HTTP {response.status_code}")
        if response.status_code >= 400:
            raise BackendError("permanent", f"{self.backend_id}: HTTP {response.status_code}: {response.text[:200]}")
        try:
            content = response.json()["choices"][0]["message"]["content"]
        except (ValueError, LookupError, TypeError) as exc:
            raise BackendError("permanent", f"{self.backend_id}: malformed completion payload") from exc
        if not isinstance(content, str):
            raise BackendError("permanent", f"{self.backend_id}: completion content is not text")
        return content


@dataclass(frozen=True)
class RetryPolicy:
    """Exponential backoff with jitter for transient backend failures."""

    max_attempts: int = 5
    base_delay_s: float = 1.0
    max_delay_s: float = 60.0
    jitter_fraction: float = 0.25

    def delay_before(self, retry_number: int, uniform: float) -> float:
        """Delay ahead of retry ``retry_number`` (1-based); ``uniform`` in [0, 1)."""
        delay = min(self.max_delay_s, self.base_delay_s * (2 ** (retry_number - 1)))
        return delay * (1.0 + self.jitter_fraction * uniform)


@dataclass(frozen=True)
class BackendLimits:
    """Per-backend budget: in-flight cap and request rate."""

    max_in_flight: Optional[int] = None
    requests_per_minute: Optional[float] = None


class _RateLimiter:
    """Serializes request starts to a minimum interval."""

    def __init__(self, requests_per_minute: float, clock: Callable[[], float], sleeper: Callable[[float], None]):
        self._interval = 60.0 / requests_per_minute
        self._clock = clock
        self._sleeper = sleeper
        self._lock = threading.Lock()
        self._next_allowed = 0.0

    def acquire(self) -> None:
        with self._lock:
            now = self._clock()
            wait = self._next_allowed - now
            self._next_allowed = max(now, self._next_allowed) + self._interval
        if wait > 0:
            self._sleeper(wait)


class Gateway:
    """Routes completion requests to named backends with retries and budgets."""

    def __init__(
        self,
        backends: Mapping[str, Backend],
        *,
        retry: RetryPolicy = RetryPolicy(),
        call_log: Optional[CallLog] = None,
        limits: Optional[Mapping[str, BackendLimits]] = None,
        sleeper: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.monotonic,
        rng: Optional[Callable[[], float]] = None,
    ):
        if not backends:
            raise ConfigError("missing_key", "gateway needs at least one backend")
        self._backends = dict(backends)
        self.retry = retry
        self.log = call_log if call_log is not None else CallLog()
        self._sleeper = sleeper
        self._clock = clock
        self._rng = rng if rng is not None else random.Random(0).random
        self._request_counter = itertools.count(1)
        self._counter_lock = threading.Lock()
        self._semaphores: dict[str, threading.Semaphore] = {}
        self._rate_limiters: dict[str, _RateLimiter] = {}
        for backend_id, budget in (limits or {}).items():
            if backend_id not in self._backends:
                raise ConfigError("bad_value", f"limits reference unknown backend {backend_id!r}")
            if budget.max_in_flight is not None:
                self._semaphores[backend_id] = threading.Semaphore(budget.max_in_flight)
            if budget.requests_per_minute is not None:
                self._rate_limiters[backend_id] = _RateLimiter(budget.requests_per_minute, clock, sleeper)

    def next_request_id(self) -> str:
        with self._counter_lock:
            return f"req-{next(self._request_counter):06d}"

    def backend(self, backend_id: str) -> Backend:
        try:
            return self._backends[backend_id]
        except KeyError:
            raise ConfigError("missing_key", f"unknown backend {backend_id!r}") from None

    def complete(
        self,
        request: CompletionRequest,
        backend_id: str,
        context: CallContext,
        *,
        base_attempt: int = 0,
    ) -> str:
        """Run one logical completion, retrying transient failures.

        Appends one CallRecord per backend attempt; attempt numbers start at
        ``base_attempt`` so callers doing their own retry loops (parse
        rejections) can keep per-step numbering contiguous.
        """
        backend = self.backend(backend_id)
        semaphore = self._semaphores.get(backend_id)
        rate_limiter = self._rate_limiters.get(backend_id)
        for try_number in range(self.retry.max_attempts):
            attempt = base_attempt + try_number
            attempt_context = replace(context, attempt=attempt)
            if rate_limiter is not None:
                rate_limiter.acquire()
            if semaphore is not None:
                semaphore.acquire()
            started = self._clock()
            try:
                text = backend.send(request, attempt_context)
            except BackendError as error:
                latency = self._clock() - started
                outcome = CallOutcome.TRANSIENT_ERROR if error.retryable else CallOutcome.PERMANENT_ERROR
                self._record(request, backend, attempt_context, outcome, latency, detail=str(error))
                if not error.retryable:
                    raise
                if try_number == self.retry.max_attempts - 1:
                    logger.warning("retry budget exhausted for %s (%s)", request.request_id, error)
                    raise
                self._sleeper(self.retry.delay_before(try_number + 1, self._rng()))
                continue
            finally:
                if semaphore is not None:
                    semaphore.release()
            latency = self._clock() - started
            self._record(request, backend, attempt_context, CallOutcome.OK, latency)
            return text
        raise AssertionError("unreachable: retry loop always returns or raises")

    def _record(
        self,
        request: CompletionRequest,
        backend: Backend,
        context: CallContext,
        outcome: CallOutcome,
        latency_s: float,
        detail: str = "",
    ) -> None:
        self.log.append(
            CallRecord(
                request_id=request.request_id,
                role=context.role,
                role_kind=context.role_kind,
                seed_id=context.seed_id,
                turn_index=context.turn_index,
                attempt=context.attempt,
                outcome=outcome,
                latency_s=latency_s,
                backend_id=backend.backend_id,
                model_name=request.model_name,
                detail=detail,
            )
        )
