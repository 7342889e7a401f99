"""Command-line entry point: synthesize, analyze, validate.

Exit codes: 0 success, 1 violations or failed dialogues (without
--allow-partial), 2 configuration problems, 3 I/O or data-format problems.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Any, Optional

from . import dataset_io
from .agents import load_templates
from .config import LoadedConfig, build_backends, build_backends_for_ids, load_config
from .errors import BackendError, ConfigError, FormatError, ValidationError
from .gateway import CallLog, Gateway, load_script_file
from .metrics import AnalysisReport, DifficultyJudge, InstructionTagger, analyze_dataset, compare_reports
from .orchestrator import run_batch
from .types import AgentProfile, RunConfig

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="panelforge",
        description="Synthesize multi-turn dialogues with a chairman/candidate/reviewer panel and analyze the results.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    subparsers = parser.add_subparsers(dest="command", required=True)

    synthesize = subparsers.add_parser("synthesize", help="grow multi-turn dialogues from seed instructions")
    synthesize.add_argument("--config", required=True, help="TOML run config")
    synthesize.add_argument("--seeds", help="seed file (Alpaca JSON array or JSONL)")
    synthesize.add_argument("--out", help="output dataset path (ShareGPT JSONL)")
    synthesize.add_argument("--turns", type=int, help="total (question, answer) pairs per dialogue")
    synthesize.add_argument("--reviewers", type=int, help="reviewer panel size")
    synthesize.add_argument("--concurrency", type=int, help="dialogues in flight at once")
    synthesize.add_argument("--max-retries", type=int, help="prompt re-samples per protocol violation")
    synthesize.add_argument("--resume", action="store_true", default=None, help="skip seeds checkpointed as complete")
    synthesize.add_argument("--dry-run", action="store_true", default=None, help="validate inputs, make no backend calls")
    synthesize.add_argument("--mock-script", help="JSON script file replacing all backends (testing)")
    synthesize.add_argument("--allow-partial", action="store_true", default=None, help="exit 0 even if some dialogues failed")
    synthesize.add_argument("--templates", help="directory overriding the built-in prompt templates")
    synthesize.set_defaults(func=cmd_synthesize)

    analyze = subparsers.add_parser("analyze", help="compute per-round diversity and difficulty for a dialogue dataset")
    analyze.add_argument("--config", help="TOML run config (judge/tagger roles and backends)")
    analyze.add_argument("--data", help="dialogue dataset (ShareGPT JSONL)")
    analyze.add_argument("--report", help="report path (JSON; a .txt table is written alongside)")
    analyze.add_argument("--compare", help="second dataset to diff against")
    analyze.add_argument("--mock-script", help="JSON script file replacing all backends (testing)")
    analyze.add_argument("--templates", help="directory overriding the built-in prompt templates")
    analyze.set_defaults(func=cmd_analyze)

    validate = subparsers.add_parser("validate", help="schema and invariant check for seed or dialogue files")
    validate.add_argument("path", help="file to check")
    validate.add_argument("--kind", choices=("seeds", "dialogues", "auto"), default="auto")
    validate.set_defaults(func=cmd_validate)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as error:
        print(f"config error: {error}", file=sys.stderr)
        print("run 'panelforge --help' for usage", file=sys.stderr)
        return 2
    except (FormatError, ValidationError, BackendError) as error:
        print(f"data error: {error}", file=sys.stderr)
        return 3
    except OSError as error:
        print(f"io error: {error}", file=sys.stderr)
        return 3


def _option(args: argparse.Namespace, run_options: dict[str, Any], flag: str, key: Optional[str] = None) -> Any:
    """Flag value if given, else the [run] config key."""
    value = getattr(args, flag, None)
    if value is not None:
        return value
    return run_options.get(key or flag)


def cmd_synthesize(args: argparse.Namespace) -> int:
    loaded = load_config(
        args.config,
        overrides={
            "total_turns": args.turns,
            "reviewers": args.reviewers,
            "concurrency_limit": args.concurrency,
            "max_parse_retries": args.max_retries,
        },
    )
    cfg = loaded.run_config
    options = loaded.run_options

    seeds_path = _option(args, options, "seeds")
    out_path = _option(args, options, "out")
    if not seeds_path:
        raise ConfigError("missing_key", "--seeds (or [run].seeds) is required")
    if not out_path:
        raise ConfigError("missing_key", "--out (or [run].out) is required")
    resume = bool(_option(args, options, "resume"))
    dry_run = bool(_option(args, options, "dry_run"))
    allow_partial = bool(_option(args, options, "allow_partial"))
    mock_script = _option(args, options, "mock_script")
    template_dir = _option(args, options, "templates", "template_dir") or loaded.template_dir

    templates = load_templates(template_dir)
    seeds = dataset_io.load_seeds(seeds_path)
    checkpoint_path = f"{out_path}.checkpoint.jsonl"
    failure_log_path = f"{out_path}.failures.jsonl"
    manifest_path = f"{out_path}.manifest.json"
    call_log_path = f"{out_path}.calls.jsonl"

    # A fresh run must not inherit skip decisions from an old one.
    if not resume and os.path.exists(checkpoint_path):
        raise ConfigError(
            "bad_value",
            f"checkpoint {checkpoint_path} exists; pass --resume to continue it or remove it first",
        )

    call_log = CallLog()
    if dry_run:
        call_log.write_jsonl(call_log_path)
        print(
            f"dry run: {len(seeds)} seeds, {cfg.total_turns} turns, "
            f"{cfg.reviewer_count} reviewers, concurrency {cfg.concurrency_limit}; no calls made"
        )
        return 0

    mock = load_script_file(mock_script) if mock_script else None
    backends, limits = build_backends(cfg, loaded.backend_settings, mock=mock)
    gateway = Gateway(backends, call_log=call_log, limits=limits)

    summary = run_batch(
        seeds,
        cfg,
        gateway,
        templates,
        out_path=out_path,
        checkpoint_path=checkpoint_path,
        failure_log_path=failure_log_path,
    )
    dataset_io.write_manifest(manifest_path, cfg, templates.hashes(), seed_count=len(seeds))
    call_log.write_jsonl(call_log_path)
    print(
        f"completed={summary.completed} failed={summary.failed} "
        f"skipped_resumed={summary.skipped_resumed}"
    )
    for code, count in sorted(summary.error_counts.items()):
        print(f"  {code}: {count}")
    if summary.failed and not allow_partial:
        return 1
    return 0


def _measurement_profiles(cfg: Optional[RunConfig], mock_active: bool) -> tuple[AgentProfile, AgentProfile]:
    judge = cfg.difficulty_judge if cfg else None
    tagger = cfg.tagger if cfg else None
    if judge is None:
        if not mock_active:
            raise ConfigError("missing_key", "analyze needs [roles.judge] (or --mock-script)")
        judge = AgentProfile(backend_id="mock", model_name="scripted-judge", temperature=0.0)
    if tagger is None:
        if not mock_active:
            raise ConfigError("missing_key", "analyze needs [roles.tagger] (or --mock-script)")
        tagger = AgentProfile(backend_id="mock", model_name="scripted-tagger", temperature=0.0)
    return judge, tagger


def cmd_analyze(args: argparse.Namespace) -> int:
    loaded: Optional[LoadedConfig] = load_config(args.config) if args.config else None
    options = loaded.run_options if loaded else {}
    data_path = _option(args, options, "data")
    if not data_path:
        raise ConfigError("missing_key", "--data (or [run].data) is required")
    report_path = _option(args, options, "report") or f"{data_path}.report.json"
    compare_path = _option(args, options, "compare")
    mock_script = _option(args, options, "mock_script")
    template_dir = (
        _option(args, options, "templates", "template_dir")
        or (loaded.template_dir if loaded else None)
    )

    templates = load_templates(template_dir)
    mock = load_script_file(mock_script) if mock_script else None
    judge_profile, tagger_profile = _measurement_profiles(loaded.run_config if loaded else None, mock is not None)

    backend_ids = {judge_profile.backend_id, tagger_profile.backend_id}
    backends, limits = build_backends_for_ids(
        backend_ids, loaded.backend_settings if loaded else {}, mock=mock
    )
    gateway = Gateway(backends, limits=limits)
    judge = DifficultyJudge(gateway, judge_profile, templates.difficulty_judge)
    tagger = InstructionTagger(gateway, tagger_profile, templates.tagger)

    dialogues = dataset_io.load_conversations(data_path)
    report = analyze_dataset(dialogues, judge, tagger)
    payload: dict[str, Any] = report.to_json_dict()
    if compare_path:
        other = analyze_dataset(dataset_io.load_conversations(compare_path), judge, tagger)
        payload["comparison"] = {
            "other": other.to_json_dict(),
            "deltas": compare_reports(report, other),
        }
    _write_report(report_path, payload, report)
    print(report.to_text_table())
    return 0


def _write_report(report_path: str, payload: dict[str, Any], report: AnalysisReport) -> None:
    with open(report_path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(payload, handle, ensure_ascii=False, indent=2, sort_keys=True)
        handle.write("\n")
    with open(f"{report_path}.txt", "w", encoding="utf-8", newline="\n") as handle:
        handle.write(report.to_text_table() + "\n")


def _detect_kind(path: str) -> str:
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            stripped = line.strip()
            if not stripped:
                continue
            if stripped[0] == "[":
                return "seeds"
            try:
                record = json.loads(stripped)
            except json.JSONDecodeError:
                return "seeds"
            return "dialogues" if isinstance(record, dict) and "conversations" in record else "seeds"
    return "seeds"


def cmd_validate(args: argparse.Namespace) -> int:
    kind = args.kind if args.kind != "auto" else _detect_kind(args.path)
    if kind == "seeds":
        violations = dataset_io.scan_seed_file(args.path)
    else:
        violations = dataset_io.scan_dialogue_file(args.path)
    if not violations:
        print(f"{args.path}: ok ({kind})")
        return 0
    for violation in violations[:10]:
        print(f"{args.path}: {violation}", file=sys.stderr)
    if len(violations) > 10:
        print(f"... and {len(violations) - 10} more", file=sys.stderr)
    return 1


if __name__ == "__main__":
    raise SystemExit(main())
