"""Recorded run data: steps, stage traces, and whole trajectories."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .codec import ToolCall
from .config import ExecutionSummary, ReconfigRequest, StageConfiguration
from .errors import MissingLogprobs
from .tools.registry import Observation

OUTCOME_KINDS = ("reconfigured", "finished", "limit_exceeded", "aborted")
RUN_STATUSES = ("finished", "failed", "limit_exceeded", "aborted")
LABELS = ("success", "failure", "unlabeled")


@dataclass(frozen=True)
class Step:
    thought: str
    call: ToolCall
    observation: Observation
    raw: str = ""  # assistant text exactly as emitted
    logprob: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "thought": self.thought,
            "call": self.call.to_dict(),
            "observation": self.observation.to_dict(),
            "raw": self.raw,
            "logprob": self.logprob,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Step":
        return cls(d["thought"], ToolCall.from_dict(d["call"]), Observation.from_dict(d["observation"]), d.get("raw", ""), d.get("logprob"))


@dataclass(frozen=True)
class StageOutcome:
    """How a stage ended.

    ``forced`` marks reconfigurations synthesized by the fixed-interval
    ablation rather than requested by the agent.
    """

    kind: str
    summary: Optional[ExecutionSummary] = None
    request: Optional[ReconfigRequest] = None
    final: Optional[dict] = None
    thought: str = ""
    raw: str = ""
    logprob: Optional[float] = None
    forced: bool = False
    detail: str = ""

    def __post_init__(self):
        if self.kind not in OUTCOME_KINDS:
            raise ValueError(f"bad outcome kind {self.kind!r}")
        if self.kind == "reconfigured" and (self.summary is None or self.request is None):
            raise ValueError("a reconfigured outcome needs a summary and a request")
        if self.kind == "finished" and self.final is None:
            raise ValueError("a finished outcome needs the finish payload")

    def __hash__(self):
        return hash((self.kind, self.summary, self.request, self.raw, self.forced))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "summary": self.summary.to_dict() if self.summary else None,
            "request": self.request.to_dict() if self.request else None,
            "final": self.final,
            "thought": self.thought,
            "raw": self.raw,
            "logprob": self.logprob,
            "forced": self.forced,
            "detail": self.detail,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StageOutcome":
        return cls(
            kind=d["kind"],
            summary=ExecutionSummary.from_dict(d["summary"]) if d.get("summary") else None,
            request=ReconfigRequest.from_dict(d["request"]) if d.get("request") else None,
            final=d.get("final"),
            thought=d.get("thought", ""),
            raw=d.get("raw", ""),
            logprob=d.get("logprob"),
            forced=d.get("forced", False),
            detail=d.get("detail", ""),
        )


@dataclass
class StageTrace:
    steps: list = field(default_factory=list)
    terminal: Optional[StageOutcome] = None

    def to_dict(self) -> dict:
        return {"steps": [s.to_dict() for s in self.steps], "terminal": self.terminal.to_dict() if self.terminal else None}

    @classmethod
    def from_dict(cls, d: dict) -> "StageTrace":
        return cls([Step.from_dict(s) for s in d["steps"]], StageOutcome.from_dict(d["terminal"]) if d.get("terminal") else None)


@dataclass(frozen=True)
class EngineCall:
    """One reconfiguration-engine invocation that produced a stage configuration."""

    messages: tuple  # ({"role", "content"}, ...) of the accepted attempt
    output_text: str
    output: dict  # the validated four-key record, before ablation pinning
    attempts: int = 1
    adopted: Optional[bool] = None
    warnings: tuple = ()
    logprob: Optional[float] = None

    def __hash__(self):
        return hash((self.output_text, self.attempts))

    def to_dict(self) -> dict:
        return {
            "messages": [dict(m) for m in self.messages],
            "output_text": self.output_text,
            "output": self.output,
            "attempts": self.attempts,
            "adopted": self.adopted,
            "warnings": list(self.warnings),
            "logprob": self.logprob,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EngineCall":
        return cls(
            messages=tuple(dict(m) for m in d["messages"]),
            output_text=d["output_text"],
            output=d["output"],
            attempts=d.get("attempts", 1),
            adopted=d.get("adopted"),
            warnings=tuple(d.get("warnings", ())),
            logprob=d.get("logprob"),
        )


@dataclass
class StageRecord:
    config: StageConfiguration
    trace: StageTrace = field(default_factory=StageTrace)
    engine: Optional[EngineCall] = None
    prompt: tuple = ()  # initial inference messages as dicts
    prompt_tokens: list = field(default_factory=list)  # per completion, after context policy
    cleanups: list = field(default_factory=list)  # (completion ordinal, tokens before, tokens after)

    @property
    def task_steps(self) -> int:
        return sum(1 for s in self.trace.steps if s.call.name in self.config.toolbox)

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "trace": self.trace.to_dict(),
            "engine": self.engine.to_dict() if self.engine else None,
            "prompt": [dict(m) for m in self.prompt],
            "prompt_tokens": list(self.prompt_tokens),
            "cleanups": [list(c) for c in self.cleanups],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StageRecord":
        return cls(
            config=StageConfiguration.from_dict(d["config"]),
            trace=StageTrace.from_dict(d["trace"]),
            engine=EngineCall.from_dict(d["engine"]) if d.get("engine") else None,
            prompt=tuple(dict(m) for m in d.get("prompt", ())),
            prompt_tokens=list(d.get("prompt_tokens", ())),
            cleanups=[tuple(c) for c in d.get("cleanups", ())],
        )


@dataclass(frozen=True)
class LogprobBundle:
    """Summed log-probabilities of the model-generated parts of a trajectory.

    Observation likelihoods belong to the environment and are not included.
    """

    init: float
    stages: tuple = ()
    reconfigs: tuple = ()

    def components(self) -> list:
        return [self.init, *self.stages, *self.reconfigs]

    def to_dict(self) -> dict:
        return {
            "init": self.init,
            "stages": list(self.stages),
            "reconfigs": list(self.reconfigs),
            "excludes": "observation likelihoods (environment-owned)",
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LogprobBundle":
        return cls(d["init"], tuple(d.get("stages", ())), tuple(d.get("reconfigs", ())))


@dataclass
class Trajectory:
    trajectory_id: str
    task: str
    stages: list = field(default_factory=list)
    status: str = "finished"
    failure: Optional[dict] = None  # {"kind": ..., "detail": ...}
    outcome: str = "unlabeled"
    logprobs: Optional[LogprobBundle] = None
    metrics: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def label(self) -> Optional[int]:
        return {"success": 1, "failure": 0}.get(self.outcome)

    @property
    def final_result(self) -> Optional[str]:
        if not self.stages:
            return None
        terminal = self.stages[-1].trace.terminal
        if terminal is not None and terminal.kind == "finished":
            return terminal.final.get("final_result")
        return None

    @property
    def reconfig_count(self) -> int:
        return sum(1 for s in self.stages if s.trace.terminal is not None and s.trace.terminal.kind == "reconfigured")

    def steps(self):
        for stage in self.stages:
            yield from stage.trace.steps

    def to_dict(self) -> dict:
        return {
            "trajectory_id": self.trajectory_id,
            "task": self.task,
            "stages": [s.to_dict() for s in self.stages],
            "status": self.status,
            "failure": self.failure,
            "outcome": self.outcome,
            "logprobs": self.logprobs.to_dict() if self.logprobs else None,
            "metrics": self.metrics,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        return cls(
            trajectory_id=d["trajectory_id"],
            task=d["task"],
            stages=[StageRecord.from_dict(s) for s in d["stages"]],
            status=d.get("status", "finished"),
            failure=d.get("failure"),
            outcome=d.get("outcome", "unlabeled"),
            logprobs=LogprobBundle.from_dict(d["logprobs"]) if d.get("logprobs") else None,
            metrics=dict(d.get("metrics", {})),
            metadata=dict(d.get("metadata", {})),
        )

    def with_label(self, outcome) -> "Trajectory":
        """Copy carrying an evaluator label (``1``/``0``/``"success"``/``"failure"``)."""
        import copy

        if outcome in (1, True):
            outcome = "success"
        elif outcome in (0, False):
            outcome = "failure"
        if outcome not in LABELS:
            raise ValueError(f"bad label {outcome!r}")
        clone = copy.copy(self)
        clone.outcome = outcome
        return clone


def trajectory_logprob(trajectory: Trajectory) -> float:
    """Log-probability of the model-generated parts: initial config, every stage trace, every later config."""
    if trajectory.logprobs is None:
        raise MissingLogprobs(f"trajectory {trajectory.trajectory_id} has no recorded log-probabilities")
    total = 0.0
    for value in trajectory.logprobs.components():
        total += value
    return total
