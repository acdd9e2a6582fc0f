"""Command-line entry points: run, replay, ablate, inspect, export, stats."""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
import warnings
from pathlib import Path

from .errors import CorruptRecord, InvalidConfiguration, SchemaVersionMismatch, ToolSelfError, UnknownScenario
from .ledger import EmptyDatasetWarning, export_datasets, normalize_record, persist, read_jsonl, tool_usage_stats
from .llm import OpenAICompatBackend, SamplingParams
from .orchestrator import MODES, AblationMode, ContextBudget, Orchestrator, RunLimits
from .scenarios import load_scenario, scenario_names
from .tools.registry import fan_out

logger = logging.getLogger("toolself")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_UNKNOWN_SCENARIO = 3
EXIT_BACKEND_UNAVAILABLE = 4
EXIT_ABORTED = 5
EXIT_LIMIT_EXCEEDED = 6
EXIT_RECONFIG_LIMIT = 7
EXIT_CORRUPT_RECORD = 8
EXIT_WRONG_ANSWER = 9

DEFAULT_CONFIG = {
    "backend": {
        "base_url": "http://localhost:8000/v1",
        "api_key_env": "OPENAI_API_KEY",
        "model_id": "default",
        "request_logprobs": False,
        "timeout": 120.0,
        "max_retries": 3,
    },
    "engine_backend": None,  # same shape as backend; None reuses it
    "sampling": {"temperature": 0.6, "top_p": 0.95, "max_output_tokens": 4096},
    "engine_sampling": None,
    "limits": {"max_iterations": 200, "max_reconfigs": 30, "per_step_timeout": 120.0},
    "budget": {
        "max_context_tokens": 32000,
        "cleanup_trigger_ratio": 0.8,
        "keep_last_iterations": 10,
        "swe_mode": False,
        "swe_char_cap": 8000,
        "swe_keep_observations": 10,
    },
    "mode": "full",
    "strict_min_tools": False,
    "tools": {"search_url": None, "reader_url": None},
}


class ConfigError(ToolSelfError):
    pass


def _coerce(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(config: dict, assignment: str) -> None:
    key, sep, raw = assignment.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {assignment!r} is not key=value")
    parts = key.split(".")
    node, ref = config, DEFAULT_CONFIG
    for part in parts[:-1]:
        if not isinstance(ref, dict) or part not in ref:
            raise ConfigError(f"unknown config key {key!r}")
        ref = ref[part]
        if node.get(part) is None:
            node[part] = copy.deepcopy(ref) if isinstance(ref, dict) else {}
        node = node[part]
    if not isinstance(ref, dict) or parts[-1] not in ref:
        raise ConfigError(f"unknown config key {key!r}")
    node[parts[-1]] = _coerce(raw)


def load_config(path=None, overrides=()) -> dict:
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {path} not found")
        try:
            user = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: {exc}") from None
        unknown = set(user) - set(DEFAULT_CONFIG)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key, value in user.items():
            if isinstance(value, dict) and isinstance(config.get(key), dict):
                bad = set(value) - set(DEFAULT_CONFIG[key])
                if bad:
                    raise ConfigError(f"unknown keys under {key!r}: {sorted(bad)}")
                config[key].update(value)
            else:
                config[key] = value
    for assignment in overrides:
        apply_override(config, assignment)
    return config


def _mode(value) -> AblationMode:
    if isinstance(value, dict):
        return AblationMode.from_dict(value)
    if value not in MODES:
        raise ConfigError(f"unknown mode {value!r}; choose from {', '.join(MODES)}")
    return MODES[value]


def _sampling(d: dict, model_id: str) -> SamplingParams:
    return SamplingParams(d["temperature"], d["top_p"], d.get("max_output_tokens", 4096), model_id)


def _live_backend(d: dict) -> OpenAICompatBackend:
    return OpenAICompatBackend(
        d["base_url"],
        api_key_env=d.get("api_key_env", "OPENAI_API_KEY"),
        request_logprobs=d.get("request_logprobs", False),
        timeout=d.get("timeout", 120.0),
        max_retries=d.get("max_retries", 3),
    )


def build_orchestrator(config: dict, scenario=None, mode=None, strict=True) -> Orchestrator:
    """Scripted backends and mock tools when a scenario is given; live ones otherwise."""
    mode = mode if mode is not None else _mode(config["mode"])
    params = _sampling(config["sampling"], config["backend"].get("model_id", "default"))
    engine_cfg = config["engine_backend"] or config["backend"]
    engine_params = _sampling(config["engine_sampling"] or config["sampling"], engine_cfg.get("model_id", "default"))
    try:
        limits = RunLimits(**config["limits"])
        budget = ContextBudget(**config["budget"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if scenario is not None:
        inference, engine = scenario.backends(strict=strict)
        tools = scenario.registry()
    else:
        from .tools.live import Extractor, live_registry
        from .config import default_tool_pool

        inference = _live_backend(config["backend"])
        engine = _live_backend(config["engine_backend"]) if config["engine_backend"] else inference
        tools = live_registry(
            default_tool_pool(),
            search_url=config["tools"].get("search_url"),
            reader_url=config["tools"].get("reader_url"),
            extractor=Extractor(inference, params),
            timeout=limits.per_step_timeout,
        )
    return Orchestrator(
        inference,
        tools,
        engine_backend=engine,
        limits=limits,
        budget=budget,
        mode=mode,
        params=params,
        engine_params=engine_params,
        strict_min_tools=config.get("strict_min_tools", False),
    )


def metrics_line(trajectory, correct=None) -> str:
    m = trajectory.metrics
    acc = "n/a" if correct is None else str(int(correct))
    return (
        f"status={trajectory.status} correct={acc} stages={m.get('stages')} steps={m.get('steps')} "
        f"reconfigs={m.get('reconfigs')} max_prompt_tokens={m.get('max_prompt_tokens')} "
        f"total_tokens={m.get('total_tokens')}"
    )


def status_exit_code(trajectory) -> int:
    if trajectory.status == "finished":
        return EXIT_OK
    if trajectory.status == "limit_exceeded":
        return EXIT_LIMIT_EXCEEDED
    if trajectory.status == "failed":
        return EXIT_RECONFIG_LIMIT
    if (trajectory.failure or {}).get("kind") == "backend_unavailable":
        return EXIT_BACKEND_UNAVAILABLE
    return EXIT_ABORTED


def _write(trajectory, out, normalize: bool) -> None:
    if not out:
        return
    record = persist(trajectory)
    if normalize:
        record = normalize_record(record)
    with open(out, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def _report(trajectory, expected=None) -> int:
    final = trajectory.final_result
    correct = None if expected is None or final is None else final.strip() == expected
    print(f"final_result: {final if final is not None else '-'}")
    if trajectory.failure:
        print(f"failure: {trajectory.failure['kind']}: {trajectory.failure.get('detail', '')}")
    print(metrics_line(trajectory, correct))
    return status_exit_code(trajectory)


def cmd_run(args, config) -> int:
    if args.scenario:
        scenario = load_scenario(args.scenario)
        orch = build_orchestrator(config, scenario, strict=False)
        task = args.task or scenario.task
        expected = scenario.expected_final
    else:
        if not args.task:
            raise ConfigError("run needs --task for a live run or --scenario for a scripted one")
        orch = build_orchestrator(config)
        task, expected = args.task, None
    trajectory = orch.run_task(task)
    _write(trajectory, args.out, args.normalize)
    return _report(trajectory, expected)


def cmd_replay(args, config) -> int:
    if not args.scenario:
        raise ConfigError("replay needs --scenario")
    scenario = load_scenario(args.scenario)
    orch = build_orchestrator(config, scenario, strict=True)
    trajectory = orch.run_task(scenario.task)
    _write(trajectory, args.out, args.normalize)
    code = _report(trajectory, scenario.expected_final)
    if code == EXIT_OK and scenario.expected_final is not None and (trajectory.final_result or "").strip() != scenario.expected_final:
        return EXIT_WRONG_ANSWER
    return code


def ablation_cell(config, scenario_name: str, mode_name: str) -> dict:
    row = {"scenario": scenario_name, "mode": mode_name}
    try:
        scenario = load_scenario(scenario_name)
        trajectory = build_orchestrator(config, scenario, mode=_mode(mode_name), strict=False).run_task(scenario.task)
    except (ToolSelfError, AssertionError, ValueError) as exc:
        row.update(success=False, error=f"{type(exc).__name__}: {exc}")
        return row
    final = trajectory.final_result
    m = trajectory.metrics
    row.update(
        success=final is not None and final.strip() == scenario.expected_final,
        status=trajectory.status,
        final_result=final,
        steps=m["steps"],
        reconfigs=m["reconfigs"],
        max_prompt_tokens=m["max_prompt_tokens"],
        total_tokens=m["total_tokens"],
    )
    return row


def cmd_ablate(args, config) -> int:
    scenarios = list(args.scenario or [])
    if args.all:
        scenarios += [s for s in scenario_names() if s not in scenarios]
    modes = args.mode or list(MODES)
    for m in modes:
        _mode(m)
    if not scenarios:
        warnings.warn("no scenarios given; the table is empty")
    cells = [(s, m) for s in scenarios for m in modes]
    rows = fan_out(lambda cell: ablation_cell(config, *cell), cells, max_workers=args.workers)
    text = json.dumps({"rows": rows}, indent=2, ensure_ascii=False)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def _diff(prev, cur) -> list:
    lines = []
    if prev is None:
        return lines
    if prev.sub_goal != cur.sub_goal:
        lines.append("  sub_goal changed")
    if prev.strategy != cur.strategy:
        lines.append("  strategy changed")
    added = [t for t in cur.toolbox if t not in prev.toolbox]
    removed = [t for t in prev.toolbox if t not in cur.toolbox]
    if added or removed:
        lines.append(f"  toolbox: +[{', '.join(added)}] -[{', '.join(removed)}] ({len(prev.toolbox)} -> {len(cur.toolbox)} tools)")
    if prev.knowledge != cur.knowledge:
        lines.append("  knowledge changed")
    return lines


def render_inspection(trajectory) -> str:
    out = [f"trajectory {trajectory.trajectory_id}  status={trajectory.status}  outcome={trajectory.outcome}", f"task: {trajectory.task}"]
    prev = None
    for stage in trajectory.stages:
        c = stage.config
        out.append("")
        out.append(f"Stage {c.stage_index + 1}")
        out.append(f"  sub_goal: {c.sub_goal}")
        out.append(f"  strategy: {c.strategy}")
        out.append(f"  toolbox: [{', '.join(c.toolbox)}]")
        knowledge = c.knowledge.replace("\n", " | ")
        out.append(f"  knowledge: {knowledge[:160] + ('...' if len(knowledge) > 160 else '') if knowledge else '(empty)'}")
        out.extend(_diff(prev, c))
        for step in stage.trace.steps:
            out.append(f"    - {step.call.name}: {step.thought.splitlines()[0] if step.thought else ''}")
        t = stage.trace.terminal
        if t is not None:
            if t.kind == "reconfigured":
                out.append(f"  -> reconfigure{' (forced)' if t.forced else ''}: {t.request.proposed_sub_goal}")
            elif t.kind == "finished":
                out.append(f"  -> finish: {t.final.get('final_result')}")
            else:
                out.append(f"  -> {t.kind}: {t.detail}")
        prev = c
    return "\n".join(out)


def _read_logs(paths) -> list:
    trajectories = []
    for p in paths:
        trajectories.extend(read_jsonl(p))
    return trajectories


def cmd_inspect(args, config) -> int:
    trajectories = _read_logs(args.logs)
    if args.id:
        trajectories = [t for t in trajectories if t.trajectory_id == args.id]
    elif args.index is not None:
        trajectories = trajectories[args.index : args.index + 1]
    print("\n\n".join(render_inspection(t) for t in trajectories))
    return EXIT_OK


def _apply_labels(trajectories, path) -> list:
    if not path:
        return trajectories
    labels = json.loads(Path(path).read_text(encoding="utf-8"))
    return [t.with_label(labels[t.trajectory_id]) if t.trajectory_id in labels else t for t in trajectories]


def cmd_export(args, config) -> int:
    trajectories = _apply_labels(_read_logs(args.logs), args.labels)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", EmptyDatasetWarning)
        result = export_datasets(trajectories, args.format, args.out or ".")
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    for module, (path, n) in result.items():
        print(f"{module}: {n} records -> {path}")
    return EXIT_OK


def cmd_stats(args, config) -> int:
    print(json.dumps(tool_usage_stats(_read_logs(args.logs)), indent=2))
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "replay": cmd_replay,
    "ablate": cmd_ablate,
    "inspect": cmd_inspect,
    "export": cmd_export,
    "stats": cmd_stats,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key (dotted)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="toolself", description="Self-reconfiguring tool agent runtime.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run one task")
    p.add_argument("--scenario", help="scripted scenario name or file; omit for a live run")
    p.add_argument("--task", help="task text (live runs, or to override the scenario task)")
    p.add_argument("--out", help="append the trajectory record to this JSONL file")
    p.add_argument("--normalize", action="store_true", help="strip ids and timestamps from the written record")

    p = sub.add_parser("replay", parents=[common], help="replay a golden scenario with prompt assertions")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out")
    p.add_argument("--normalize", action="store_true")

    p = sub.add_parser("ablate", parents=[common], help="run scenarios under ablation modes")
    p.add_argument("--scenario", action="append", help="scenario name or file (repeatable)")
    p.add_argument("--all", action="store_true", help="include every packaged scenario")
    p.add_argument("--mode", action="append", choices=list(MODES), help="mode (repeatable; default all)")
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--out", help="write the JSON table here as well")

    p = sub.add_parser("inspect", parents=[common], help="stage-by-stage view of recorded trajectories")
    p.add_argument("logs", nargs="+")
    p.add_argument("--index", type=int)
    p.add_argument("--id")

    p = sub.add_parser("export", parents=[common], help="export training datasets")
    p.add_argument("logs", nargs="+")
    p.add_argument("--format", choices=["sft", "kto"], required=True)
    p.add_argument("--labels", help="JSON file mapping trajectory id to 0/1")
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("stats", parents=[common], help="tool selection frequencies")
    p.add_argument("logs", nargs="+")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config, args.set)
        return COMMANDS[args.command](args, config)
    except UnknownScenario as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNKNOWN_SCENARIO
    except (CorruptRecord, SchemaVersionMismatch) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CORRUPT_RECORD
    except (ConfigError, InvalidConfiguration) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ToolSelfError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ABORTED


if __name__ == "__main__":
    sys.exit(main())
