"""Run configuration: a single TOML file describing roles, backends, and paths.

Example:

    total_turns = 3
    max_parse_retries = 3
    concurrency_limit = 4

    [roles.chairman]
    backend = "main"
    model = "qwen1.5-14b-chat"

    [roles.candidate]
    backend = "main"
    model = "qwen1.5-14b-chat"

    [[roles.reviewers]]
    backend = "main"
    model = "reviewer-model-a"

    [backends.main]
    base_url = "http://localhost:8000/v1"

    [run]
    seeds = "alpaca.json"
    out = "dialogues.jsonl"

Command-line flags override [run] keys and the top-level knobs. Generation
roles default to temperature 0.7; the judge and tagger default to 0.0 so
measurements stay deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ConfigError
from .gateway import Backend, BackendLimits, HttpBackend
from .types import AgentProfile, RunConfig

GENERATION_TEMPERATURE_DEFAULT = 0.7
MEASUREMENT_TEMPERATURE_DEFAULT = 0.0


@dataclass(frozen=True)
class BackendSettings:
    backend_id: str
    base_url: str
    api_key_env: Optional[str] = None
    timeout_s: float = 120.0
    limits: BackendLimits = BackendLimits()


@dataclass(frozen=True)
class LoadedConfig:
    run_config: RunConfig
    backend_settings: dict[str, BackendSettings]
    run_options: dict[str, Any]
    template_dir: Optional[str] = None


def load_config_file(path: str) -> dict[str, Any]:
    try:
        with open(path, "rb") as handle:
            return tomllib.load(handle)
    except FileNotFoundError:
        raise ConfigError("missing_key", f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as error:
        raise ConfigError("bad_value", f"{path}: {error}") from error


def _profile_from_table(
    table: Mapping[str, Any],
    *,
    where: str,
    default_temperature: float,
) -> AgentProfile:
    if "model" not in table:
        raise ConfigError("missing_key", f"{where}: 'model' is required")
    return AgentProfile(
        backend_id=str(table.get("backend", "main")),
        model_name=str(table["model"]),
        temperature=float(table.get("temperature", default_temperature)),
        max_output_tokens=int(table.get("max_output_tokens", 1024)),
        word_limit=int(table.get("word_limit", 300)),
    )


def _adjust_reviewers(profiles: list[AgentProfile], count: Optional[int]) -> list[AgentProfile]:
    """Resize the reviewer panel: truncate, or replicate the last profile."""
    if count is None or count == len(profiles):
        return profiles
    if count < 1:
        raise ConfigError("bad_value", f"reviewer count must be >= 1, got {count}")
    if count < len(profiles):
        return profiles[:count]
    return profiles + [profiles[-1]] * (count - len(profiles))


def build_run_config(raw: Mapping[str, Any], overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Turn a parsed config file plus flag overrides into a RunConfig."""
    overrides = dict(overrides or {})
    roles = raw.get("roles")
    if not isinstance(roles, dict):
        raise ConfigError("missing_key", "config needs a [roles] section with chairman/candidate/reviewers")
    for role_name in ("chairman", "candidate"):
        if role_name not in roles:
            raise ConfigError("missing_key", f"config needs [roles.{role_name}]")
    reviewer_tables = roles.get("reviewers")
    if not isinstance(reviewer_tables, list) or not reviewer_tables:
        raise ConfigError("missing_key", "config needs at least one [[roles.reviewers]] block")

    reviewers = [
        _profile_from_table(table, where=f"roles.reviewers[{position}]", default_temperature=GENERATION_TEMPERATURE_DEFAULT)
        for position, table in enumerate(reviewer_tables)
    ]
    reviewers = _adjust_reviewers(reviewers, overrides.get("reviewers"))

    def knob(name: str, default: int) -> int:
        if overrides.get(name) is not None:
            return int(overrides[name])
        return int(raw.get(name, default))

    judge_table = roles.get("judge") or roles.get("difficulty_judge")
    tagger_table = roles.get("tagger")
    return RunConfig(
        chairman=_profile_from_table(roles["chairman"], where="roles.chairman", default_temperature=GENERATION_TEMPERATURE_DEFAULT),
        candidate=_profile_from_table(roles["candidate"], where="roles.candidate", default_temperature=GENERATION_TEMPERATURE_DEFAULT),
        reviewers=tuple(reviewers),
        difficulty_judge=(
            _profile_from_table(judge_table, where="roles.judge", default_temperature=MEASUREMENT_TEMPERATURE_DEFAULT)
            if judge_table
            else None
        ),
        tagger=(
            _profile_from_table(tagger_table, where="roles.tagger", default_temperature=MEASUREMENT_TEMPERATURE_DEFAULT)
            if tagger_table
            else None
        ),
        total_turns=knob("total_turns", 3),
        max_parse_retries=knob("max_parse_retries", 3),
        concurrency_limit=knob("concurrency_limit", 4),
    )


def build_backend_settings(raw: Mapping[str, Any]) -> dict[str, BackendSettings]:
    settings: dict[str, BackendSettings] = {}
    for backend_id, table in (raw.get("backends") or {}).items():
        if not isinstance(table, dict) or "base_url" not in table:
            raise ConfigError("missing_key", f"backends.{backend_id}: 'base_url' is required")
        settings[backend_id] = BackendSettings(
            backend_id=backend_id,
            base_url=str(table["base_url"]),
            api_key_env=table.get("api_key_env"),
            timeout_s=float(table.get("timeout_s", 120.0)),
            limits=BackendLimits(
                max_in_flight=int(table["max_in_flight"]) if "max_in_flight" in table else None,
                requests_per_minute=float(table["requests_per_minute"]) if "requests_per_minute" in table else None,
            ),
        )
    return settings


def referenced_backend_ids(cfg: RunConfig) -> set[str]:
    ids = {cfg.chairman.backend_id, cfg.candidate.backend_id}
    ids.update(profile.backend_id for profile in cfg.reviewers)
    if cfg.difficulty_judge:
        ids.add(cfg.difficulty_judge.backend_id)
    if cfg.tagger:
        ids.add(cfg.tagger.backend_id)
    return ids


def build_backends_for_ids(
    backend_ids,
    settings: Mapping[str, BackendSettings],
    *,
    mock: Optional[Backend] = None,
) -> tuple[dict[str, Backend], dict[str, BackendLimits]]:
    """Instantiate one backend per id.

    With a mock, every id routes to it (scripted runs need no network config
    at all); otherwise each id must have a [backends.<id>] section."""
    backends: dict[str, Backend] = {}
    limits: dict[str, BackendLimits] = {}
    for backend_id in sorted(backend_ids):
        if mock is not None:
            backends[backend_id] = mock
            continue
        if backend_id not in settings:
            raise ConfigError("missing_key", f"no [backends.{backend_id}] section for referenced backend")
        entry = settings[backend_id]
        backends[backend_id] = HttpBackend(
            backend_id,
            entry.base_url,
            api_key_env=entry.api_key_env,
            timeout_s=entry.timeout_s,
        )
        if entry.limits != BackendLimits():
            limits[backend_id] = entry.limits
    return backends, limits


def build_backends(
    cfg: RunConfig,
    settings: Mapping[str, BackendSettings],
    *,
    mock: Optional[Backend] = None,
) -> tuple[dict[str, Backend], dict[str, BackendLimits]]:
    return build_backends_for_ids(referenced_backend_ids(cfg), settings, mock=mock)


def load_config(path: str, overrides: Optional[Mapping[str, Any]] = None) -> LoadedConfig:
    raw = load_config_file(path)
    run_config = build_run_config(raw, overrides)
    template_dir = raw.get("template_dir")
    run_section = raw.get("run") or {}
    if not isinstance(run_section, dict):
        raise ConfigError("bad_value", "[run] must be a table")
    return LoadedConfig(
        run_config=run_config,
        backend_settings=build_backend_settings(raw),
        run_options=dict(run_section),
        template_dir=str(template_dir) if template_dir else None,
    )
