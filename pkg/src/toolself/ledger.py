"""Trajectory storage, credit assignment, dataset export, and the KTO loss."""

from __future__ import annotations

import json
import math
import os
import threading
import warnings
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional

from .codec import render_tool_response
from .config import default_tool_pool
from .errors import CorruptRecord, SchemaVersionMismatch, UnlabeledTrajectory
from .trajectory import Trajectory

SCHEMA_VERSION = 1
MODULES = ("inference", "reconfiguration")
FORMATS = ("sft", "kto")
VOLATILE_METADATA = ("started_at", "finished_at")


class EmptyDatasetWarning(UserWarning):
    pass


# -- persistence ------------------------------------------------------------------


def persist(trajectory: Trajectory) -> dict:
    return {"version": SCHEMA_VERSION, "trajectory": trajectory.to_dict()}


def load(record: dict) -> Trajectory:
    if not isinstance(record, dict) or "version" not in record:
        raise CorruptRecord("record has no version tag")
    if record["version"] != SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"unsupported schema version {record['version']!r} (expected {SCHEMA_VERSION})")
    try:
        return Trajectory.from_dict(record["trajectory"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptRecord(f"malformed trajectory: {exc}") from exc


_append_lock = threading.Lock()


def append_jsonl(path, trajectories: Iterable[Trajectory]) -> int:
    """Append one line per trajectory. Each line is written in a single call."""
    n = 0
    with _append_lock, open(path, "a", encoding="utf-8") as fh:
        for t in trajectories:
            fh.write(json.dumps(persist(t), ensure_ascii=False) + "\n")
            fh.flush()
            n += 1
    return n


def write_jsonl(path, trajectories: Iterable[Trajectory]) -> int:
    Path(path).write_text("")
    return append_jsonl(path, trajectories)


def read_jsonl(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorruptRecord(f"invalid JSON: {exc.msg}", line=lineno) from None
            try:
                out.append(load(record))
            except CorruptRecord as exc:
                raise CorruptRecord(exc.args[0], line=lineno) from None
    return out


def normalize_record(record: dict) -> dict:
    """Copy of a persisted record with run-specific noise removed (ids, timestamps, latencies)."""
    record = json.loads(json.dumps(record))
    t = record["trajectory"]
    t["trajectory_id"] = ""
    for key in VOLATILE_METADATA:
        t.get("metadata", {}).pop(key, None)
    for stage in t["stages"]:
        for step in stage["trace"]["steps"]:
            step["observation"]["latency_ms"] = 0
    return record


# -- credit assignment ----------------------------------------------------------------


@dataclass(frozen=True)
class TrainingSample:
    module: str
    prompt: tuple  # message dicts
    target: object  # message dicts (inference) or the engine record as JSON text (reconfiguration)
    label: int
    trajectory_id: str
    stage_index: int

    def to_dict(self, with_label: bool = True) -> dict:
        out = {
            "module": self.module,
            "prompt": [dict(m) for m in self.prompt],
            "target": [dict(m) for m in self.target] if isinstance(self.target, tuple) else self.target,
            "trajectory_id": self.trajectory_id,
            "stage_index": self.stage_index,
        }
        if with_label:
            out["label"] = self.label
        return out


def stage_target(stage) -> tuple:
    """The stage transcript as the model saw it: assistant turns with tool responses between them."""
    turns = []
    for step in stage.trace.steps:
        turns.append({"role": "assistant", "content": step.raw})
        turns.append({"role": "user", "content": render_tool_response(step.observation.body)})
    terminal = stage.trace.terminal
    if terminal is not None and terminal.raw:
        turns.append({"role": "assistant", "content": terminal.raw})
    return tuple(turns)


def assign_labels(trajectory: Trajectory, y: Optional[int] = None) -> list:
    """Propagate the trajectory label to every stage transcript and every configuration.

    Stages whose configuration did not come from the engine (all fields
    pinned) have no reconfiguration sample.
    """
    if y is None:
        y = trajectory.label
    if y not in (0, 1):
        raise UnlabeledTrajectory(f"trajectory {trajectory.trajectory_id} has no label")
    y = int(y)
    samples = []
    for stage in trajectory.stages:
        idx = stage.config.stage_index
        samples.append(TrainingSample("inference", stage.prompt, stage_target(stage), y, trajectory.trajectory_id, idx))
    for stage in trajectory.stages:
        if stage.engine is None:
            continue
        samples.append(
            TrainingSample(
                "reconfiguration",
                stage.engine.messages,
                json.dumps(stage.engine.output, ensure_ascii=False),
                y,
                trajectory.trajectory_id,
                stage.config.stage_index,
            )
        )
    return samples


def filter_rft(trajectories: Iterable[Trajectory]) -> list:
    """Successful trajectories only, in input order."""
    return [t for t in trajectories if t.label == 1]


def export_datasets(trajectories, format: str, out_dir) -> dict:
    """Write ``{format}_inference.jsonl`` and ``{format}_reconfiguration.jsonl``.

    Returns ``{module: (path, record count)}``.
    """
    if format not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    trajectories = list(trajectories)
    if format == "kto":
        for t in trajectories:
            if t.label is None:
                raise UnlabeledTrajectory(f"trajectory {t.trajectory_id} has no label")
        chosen = trajectories
    else:
        chosen = filter_rft(trajectories)
    by_module = {m: [] for m in MODULES}
    for t in chosen:
        for sample in assign_labels(t):
            by_module[sample.module].append(sample.to_dict(with_label=format == "kto"))
    os.makedirs(out_dir, exist_ok=True)
    result = {}
    for module, records in by_module.items():
        path = Path(out_dir) / f"{format}_{module}.jsonl"
        with open(path, "w", encoding="utf-8") as fh:
            for r in records:
                fh.write(json.dumps(r, ensure_ascii=False) + "\n")
        if not records:
            warnings.warn(f"{path.name} is empty", EmptyDatasetWarning, stacklevel=2)
        result[module] = (path, len(records))
    return result


# -- KTO -------------------------------------------------------------------------------


@dataclass(frozen=True)
class KtoParams:
    lambda_d: float = 1.0
    lambda_u: float = 1.0
    beta: float = 0.1
    z0: float = 0.0

    def __post_init__(self):
        if self.lambda_d <= 0 or self.lambda_u <= 0 or self.beta <= 0:
            raise ValueError("lambda_d, lambda_u and beta must be positive")


def logistic(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def default_value_fn(beta: float) -> Callable[[float], float]:
    """v(u) = 1 - logistic(beta * u): low loss when the ratio is on the preferred side."""
    return lambda u: logistic(-beta * u)


def kto_loss(r: float, y: int, params: KtoParams = KtoParams(), value_fn: Optional[Callable[[float], float]] = None) -> float:
    """Per-sample KTO loss for log-prob ratio ``r`` and binary label ``y``."""
    v = value_fn or default_value_fn(params.beta)
    if y == 1:
        return params.lambda_d * v(r - params.z0)
    if y == 0:
        return params.lambda_u * v(params.z0 - r)
    raise ValueError(f"label must be 0 or 1, got {y!r}")


# -- analysis -----------------------------------------------------------------------------


def tool_usage_stats(trajectories, tools: Optional[Iterable[str]] = None) -> dict:
    """Per tool: share of trajectories whose stage toolboxes include it, and share of steps calling it."""
    trajectories = list(trajectories)
    tools = tuple(tools) if tools is not None else default_tool_pool().names
    selected = Counter()
    invoked = Counter()
    total_steps = 0
    for t in trajectories:
        union = set()
        for stage in t.stages:
            union.update(stage.config.toolbox)
        selected.update(union)
        for step in t.steps():
            invoked[step.call.name] += 1
            total_steps += 1
    n = len(trajectories)
    return {
        tool: {
            "trajectory_frequency": selected[tool] / n if n else 0.0,
            "step_frequency": invoked[tool] / total_steps if total_steps else 0.0,
        }
        for tool in tools
    }
