"""The inference/reconfiguration loop with run limits, context policy, and ablation modes."""

from __future__ import annotations

import logging
import uuid
from dataclasses import dataclass, field, replace
from functools import lru_cache
from datetime import datetime, timezone
from typing import Callable, Optional, Sequence

from .codec import parse_assistant_turn, render_tool_response, validate_call
from .config import (
    FINISH,
    RECONFIGURE,
    ExecutionSummary,
    GlobalHistoryPool,
    GlobalToolPool,
    ReconfigRequest,
    StageConfiguration,
    default_tool_pool,
)
from .engine import ReconfigEngine
from .errors import (
    BackendError,
    BackendUnavailable,
    CallValidationError,
    CodecError,
    ContextOverflow,
    EngineOutputInvalid,
    InvalidConfiguration,
    RateLimited,
)
from .llm import ChatMessage, SamplingParams, count_message_tokens, count_tokens
from .prompts import TemplateSet, inference_schemas, render_inference_prompt
from .tools.registry import Observation, ToolRegistry, ToolSession
from .tools.truncation import compress_old_observations, truncate_message
from .trajectory import LogprobBundle, StageOutcome, StageRecord, Step, Trajectory

logger = logging.getLogger(__name__)

COMPONENTS = ("sub_goal", "strategy", "toolbox", "context")
GENERIC_STRATEGY = (
    "As a general-purpose assistant, I will work step by step: pick the most suitable "
    "tool from the toolbox for each step, check every tool result, and call finish "
    "once the main task is fully resolved."
)
CORRECTIVE_TEXT = (
    "Your last output was not a valid tool call ({reason}). Reply with a <think> block "
    "followed by exactly one <tool_call> block containing a JSON object with "
    '"name" and "arguments".'
)
MAX_CONSECUTIVE_FAILURES = 3


@dataclass(frozen=True)
class RunLimits:
    max_iterations: int = 200
    max_reconfigs: int = 30
    per_step_timeout: float = 120.0

    def __post_init__(self):
        if self.max_iterations <= 0 or self.max_reconfigs <= 0:
            raise ValueError("limits must be positive")


@dataclass(frozen=True)
class ContextBudget:
    max_context_tokens: int = 32000
    cleanup_trigger_ratio: float = 0.8
    keep_last_iterations: int = 10
    swe_mode: bool = False
    swe_char_cap: int = 8000
    swe_keep_observations: int = 10

    def __post_init__(self):
        if not 0 < self.cleanup_trigger_ratio <= 1:
            raise ValueError("cleanup_trigger_ratio must lie in (0, 1]")

    @property
    def trigger_threshold(self) -> int:
        return round(self.max_context_tokens * self.cleanup_trigger_ratio)


@dataclass(frozen=True)
class AblationMode:
    """Which parts of self-reconfiguration the agent keeps.

    ``fixed_interval_when`` replaces agent-triggered reconfiguration with a
    forced one every n task-tool steps (the reconfigure tool is withheld).
    ``drop_request_how`` hides the agent's request from the engine.
    ``disable`` pins components: sub_goal to the task, strategy to a generic
    text, toolbox to the whole pool, context to empty.
    """

    fixed_interval_when: Optional[int] = None
    drop_request_how: bool = False
    disable: frozenset = frozenset()
    allow_reconfigure: bool = True

    def __post_init__(self):
        object.__setattr__(self, "disable", frozenset(self.disable))
        unknown = self.disable - set(COMPONENTS)
        if unknown:
            raise ValueError(f"unknown components: {sorted(unknown)}")
        if self.fixed_interval_when is not None and self.fixed_interval_when <= 0:
            raise ValueError("fixed_interval_when must be positive")

    @property
    def reconfigure_available(self) -> bool:
        return self.allow_reconfigure and self.fixed_interval_when is None

    def to_dict(self) -> dict:
        return {
            "fixed_interval_when": self.fixed_interval_when,
            "drop_request_how": self.drop_request_how,
            "disable": sorted(self.disable),
            "allow_reconfigure": self.allow_reconfigure,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AblationMode":
        return cls(d.get("fixed_interval_when"), d.get("drop_request_how", False), frozenset(d.get("disable", ())), d.get("allow_reconfigure", True))


MODES = {
    "full": AblationMode(),
    "wo-when": AblationMode(fixed_interval_when=5),
    "wo-how": AblationMode(drop_request_how=True),
    "wo-both": AblationMode(fixed_interval_when=5, drop_request_how=True),
    "wo-subgoal": AblationMode(disable={"sub_goal"}),
    "wo-strategy": AblationMode(disable={"strategy"}),
    "wo-toolbox": AblationMode(disable={"toolbox"}),
    "wo-context": AblationMode(disable={"context"}),
    "static": AblationMode(disable=set(COMPONENTS), allow_reconfigure=False),
}


# -- context policy ---------------------------------------------------------------


def step_messages(steps: Sequence[Step]) -> list:
    out = []
    for step in steps:
        out.append(ChatMessage("assistant", step.raw))
        out.append(ChatMessage("user", render_tool_response(step.observation.body)))
    return out


@lru_cache(maxsize=8192)
def _step_cost(raw: str, body: str, counter) -> int:
    return count_tokens(raw, counter) + count_tokens(render_tool_response(body), counter)


def steps_tokens(steps: Sequence[Step], counter=None) -> int:
    return sum(_step_cost(s.raw, s.observation.body, counter) for s in steps)


def _truncate_step(step: Step, cap: int) -> Step:
    body = truncate_message(step.observation.body, cap)
    raw = truncate_message(step.raw, cap)
    if body == step.observation.body and raw == step.raw:
        return step
    obs = replace(step.observation, body=body, truncated=step.observation.truncated or body != step.observation.body)
    return replace(step, observation=obs, raw=raw)


def apply_context_policy(stage_steps, prompt_prefix_tokens: int, budget: ContextBudget, counter=None) -> list:
    """Prune the in-stage transcript before the next completion.

    In SWE mode every step but the newest is capped in size and old
    observations are compressed, regardless of the token count. Once the
    prompt reaches the trigger threshold only the newest
    ``keep_last_iterations`` steps survive; if those still overflow the
    window, older ones go too and finally the newest observation is cut.
    """
    steps = list(stage_steps)
    if budget.swe_mode and steps:
        steps = [_truncate_step(s, budget.swe_char_cap) for s in steps[:-1]] + steps[-1:]
        steps = compress_old_observations(steps, budget.swe_keep_observations)
    if prompt_prefix_tokens + steps_tokens(steps, counter) < budget.trigger_threshold:
        return steps
    steps = steps[-budget.keep_last_iterations :] if budget.keep_last_iterations else []
    while len(steps) > 1 and prompt_prefix_tokens + steps_tokens(steps, counter) > budget.max_context_tokens:
        steps = steps[1:]
    if steps and prompt_prefix_tokens + steps_tokens(steps, counter) > budget.max_context_tokens:
        steps = [_fit_step(steps[0], budget.max_context_tokens - prompt_prefix_tokens, counter)]
    return steps


def _fit_step(step: Step, allowance: int, counter) -> Step:
    overhead = count_tokens(step.raw, counter) + count_tokens(render_tool_response(""), counter) + 16
    chars = max(64, (allowance - overhead) * 4)
    fitted = _truncate_step(replace(step, raw=step.raw), chars)
    while chars > 64 and steps_tokens([fitted], counter) > allowance:
        chars //= 2
        fitted = _truncate_step(step, chars)
    return fitted


# -- run state -------------------------------------------------------------------


@dataclass
class RunState:
    history: GlobalHistoryPool = field(default_factory=GlobalHistoryPool)
    completions: int = 0
    reconfigs: int = 0
    max_prompt_tokens: int = 0
    total_tokens: int = 0
    session: Optional[ToolSession] = None


def _failure_kind(exc: Exception) -> str:
    if isinstance(exc, BackendUnavailable):
        return "backend_unavailable"
    if isinstance(exc, ContextOverflow):
        return "context_overflow"
    if isinstance(exc, RateLimited):
        return "rate_limited"
    if isinstance(exc, EngineOutputInvalid):
        return "engine_output_invalid"
    return "backend_error"


def auto_summary(steps: Sequence[Step]) -> str:
    lines = [s.thought.strip().splitlines()[0] for s in steps if s.thought.strip()]
    return "\n".join(lines) if lines else f"Completed {len(steps)} tool steps."


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


class Orchestrator:
    """Runs tasks through the inference/reconfiguration loop.

    Holds only shared, read-only collaborators; per-run state lives in
    :class:`RunState`, so one orchestrator may serve concurrent runs provided
    the backends and registry are shareable.
    """

    def __init__(
        self,
        backend,
        tools: ToolRegistry,
        engine_backend=None,
        pool: Optional[GlobalToolPool] = None,
        limits: RunLimits = RunLimits(),
        budget: ContextBudget = ContextBudget(),
        mode: AblationMode = AblationMode(),
        params: Optional[SamplingParams] = None,
        engine_params: Optional[SamplingParams] = None,
        counter=None,
        templates: Optional[TemplateSet] = None,
        strict_min_tools: bool = False,
        session_factory: Callable[[], ToolSession] = ToolSession,
        clock: Callable[[], str] = _utcnow,
    ):
        self.backend = backend
        self.engine_backend = engine_backend if engine_backend is not None else backend
        self.tools = tools
        self.pool = pool or default_tool_pool()
        self.limits = limits
        self.budget = budget
        self.mode = mode
        self.params = params or SamplingParams.runtime()
        self.engine_params = engine_params or self.params
        self.counter = counter
        self.templates = templates
        self.strict_min_tools = strict_min_tools
        self.session_factory = session_factory
        self.clock = clock

    # -- configuration ----------------------------------------------------------

    def _engine(self) -> ReconfigEngine:
        return ReconfigEngine(
            self.engine_backend,
            self.pool,
            self.engine_params,
            self.templates,
            strict_min_tools=self.strict_min_tools,
            counter=self.counter,
        )

    def _pin(self, config: StageConfiguration, task: str) -> StageConfiguration:
        pins = {}
        if "sub_goal" in self.mode.disable:
            pins["sub_goal"] = task
        if "strategy" in self.mode.disable:
            pins["strategy"] = GENERIC_STRATEGY
        if "toolbox" in self.mode.disable:
            pins["toolbox"] = self.pool.names
        if "context" in self.mode.disable:
            pins["knowledge"] = ""
        return replace(config, **pins) if pins else config

    def _configure(self, task: str, state: RunState, request: Optional[ReconfigRequest]):
        if self.mode.disable == frozenset(COMPONENTS):
            # every field is pinned, so the engine's answer could not matter
            base = StageConfiguration(len(state.history), task, GENERIC_STRATEGY, self.pool.names, "")
            return base, None
        engine = self._engine()
        result = engine.run(task, state.history, request)
        for p, o in engine.usage:
            state.total_tokens += p + o
        return self._pin(result.config, task), result.call

    def initialize(self, task: str, state: Optional[RunState] = None) -> StageConfiguration:
        """Initial configuration from an empty request and empty history."""
        return self._configure(task, state or RunState(), None)[0]

    # -- one stage ----------------------------------------------------------------

    def run_stage(self, task: str, config: StageConfiguration, state: Optional[RunState] = None) -> StageOutcome:
        return self.execute_stage(task, config, state or RunState()).trace.terminal

    def execute_stage(self, task: str, config: StageConfiguration, state: RunState) -> StageRecord:
        record = StageRecord(config=config)
        mode = self.mode
        with_reconfigure = mode.reconfigure_available
        schemas = inference_schemas(config, self.pool, include_reconfigure=with_reconfigure)
        bundle = render_inference_prompt(task, config, schemas, self.templates)
        base = bundle.messages()
        record.prompt = tuple(m.to_dict() for m in base)
        prefix_tokens = count_message_tokens(base, self.counter)
        threshold = self.budget.trigger_threshold

        view: list = []
        pending: list = []
        failures = 0
        task_steps = 0

        def finish_with(outcome: StageOutcome) -> StageRecord:
            record.trace.terminal = outcome
            return record

        while True:
            if state.completions >= self.limits.max_iterations:
                return finish_with(StageOutcome("limit_exceeded", detail=f"reached {self.limits.max_iterations} completions"))

            before = prefix_tokens + steps_tokens(view, self.counter)
            view = apply_context_policy(view, prefix_tokens, self.budget, self.counter)
            if before >= threshold:
                record.cleanups.append((state.completions, before, prefix_tokens + steps_tokens(view, self.counter)))
            messages = base + step_messages(view) + pending
            prompt_tokens = prefix_tokens + steps_tokens(view, self.counter) + count_message_tokens(pending, self.counter)
            record.prompt_tokens.append(prompt_tokens)
            state.max_prompt_tokens = max(state.max_prompt_tokens, prompt_tokens)

            try:
                completion = self.backend.complete(messages, self.params)
            except BackendError as exc:
                return finish_with(StageOutcome("aborted", detail=f"{_failure_kind(exc)}: {exc}"))
            state.completions += 1
            state.total_tokens += completion.prompt_tokens + completion.output_tokens
            text = completion.text

            try:
                turn = parse_assistant_turn(text)
                name = turn.call.name
                if name == RECONFIGURE and not with_reconfigure:
                    raise CallValidationError("the reconfigure tool is not available in this run")
                if name in (RECONFIGURE, FINISH):
                    validate_call(turn.call, self.pool.schema(name))
                if name == RECONFIGURE:
                    args = turn.call.arguments
                    summary = ExecutionSummary(config.stage_index, config.sub_goal, args["execution_summary"])
                    request = ReconfigRequest.from_arguments(args)
            except (CodecError, CallValidationError, InvalidConfiguration) as exc:
                failures += 1
                logger.warning("stage %d: unusable completion (%d in a row): %s", config.stage_index, failures, exc)
                if failures >= MAX_CONSECUTIVE_FAILURES:
                    return finish_with(StageOutcome("aborted", detail=f"unparseable_output: {exc}"))
                pending = pending + [
                    ChatMessage("assistant", text),
                    ChatMessage("user", CORRECTIVE_TEXT.format(reason=exc)),
                ]
                continue
            failures = 0
            pending = []

            if name == FINISH:
                args = turn.call.arguments
                done = ExecutionSummary(
                    config.stage_index,
                    config.sub_goal,
                    "\n".join(args["execution_summary"]["detailed_execution"]) or str(args["final_result"]),
                ) if (args["execution_summary"]["detailed_execution"] or args["final_result"]) else None
                return finish_with(
                    StageOutcome("finished", summary=done, final=args, thought=turn.thought, raw=text, logprob=completion.logprob)
                )
            if name == RECONFIGURE:
                return finish_with(
                    StageOutcome(
                        "reconfigured",
                        summary=summary,
                        request=request,
                        thought=turn.thought,
                        raw=text,
                        logprob=completion.logprob,
                    )
                )

            if name in config.toolbox:
                # an explicit per-call timeout argument takes precedence over the stage default
                limit = None if "timeout" in turn.call.arguments else self.limits.per_step_timeout
                obs = self.tools.dispatch(turn.call, state.session, timeout=limit)
            else:
                obs = Observation(
                    body=f"Error: tool {name!r} is not in the current toolbox ({', '.join(config.toolbox) or 'empty'}). "
                    "Use reconfigure to change the toolbox.",
                    source_tool=name,
                )
            step = Step(turn.thought, turn.call, obs, raw=text, logprob=completion.logprob)
            record.trace.steps.append(step)
            view.append(step)
            if name in config.toolbox:
                task_steps += 1
                n = mode.fixed_interval_when
                if n is not None and task_steps == n:
                    return finish_with(self._forced_reconfigure(config, record.trace.steps, n))

    def _forced_reconfigure(self, config: StageConfiguration, steps, n: int) -> StageOutcome:
        return StageOutcome(
            "reconfigured",
            summary=ExecutionSummary(config.stage_index, config.sub_goal, auto_summary(steps)),
            request=ReconfigRequest(config.sub_goal, f"Fixed-interval reconfiguration after {n} task-tool steps."),
            forced=True,
        )

    # -- whole task -----------------------------------------------------------------

    def run_task(self, task: str, trajectory_id: Optional[str] = None) -> Trajectory:
        state = RunState(session=self.session_factory())
        traj = Trajectory(
            trajectory_id=trajectory_id or uuid.uuid4().hex,
            task=task,
            metadata={
                "started_at": self.clock(),
                "model_id": self.params.model_id,
                "engine_model_id": self.engine_params.model_id,
                "sampling": {"temperature": self.params.temperature, "top_p": self.params.top_p},
                "engine_sampling": {"temperature": self.engine_params.temperature, "top_p": self.engine_params.top_p},
                "mode": self.mode.to_dict(),
                "limits": {"max_iterations": self.limits.max_iterations, "max_reconfigs": self.limits.max_reconfigs},
                "budget": {
                    "max_context_tokens": self.budget.max_context_tokens,
                    "trigger_threshold": self.budget.trigger_threshold,
                    "keep_last_iterations": self.budget.keep_last_iterations,
                    "swe_mode": self.budget.swe_mode,
                },
            },
        )
        try:
            self._loop(task, state, traj)
        finally:
            if state.session is not None:
                state.session.close()
        traj.metadata["finished_at"] = self.clock()
        traj.metrics = self._metrics(traj, state)
        traj.logprobs = _logprob_bundle(traj)
        return traj

    def _loop(self, task: str, state: RunState, traj: Trajectory) -> None:
        try:
            config, call = self._configure(task, state, None)
        except (EngineOutputInvalid, BackendError) as exc:
            traj.status, traj.failure = "aborted", {"kind": _failure_kind(exc), "detail": str(exc)}
            return
        while True:
            record = self.execute_stage(task, config, state)
            record.engine = call
            traj.stages.append(record)
            terminal = record.trace.terminal
            if terminal.kind == "finished":
                traj.status = "finished"
                return
            if terminal.kind == "limit_exceeded":
                traj.status, traj.failure = "limit_exceeded", {"kind": "max_iterations", "detail": terminal.detail}
                return
            if terminal.kind == "aborted":
                kind, _, detail = terminal.detail.partition(": ")
                traj.status, traj.failure = "aborted", {"kind": kind, "detail": detail}
                return

            state.history.append(terminal.summary)
            state.reconfigs += 1
            if state.reconfigs > self.limits.max_reconfigs:
                traj.status = "failed"
                traj.failure = {"kind": "max_reconfigs", "detail": f"more than {self.limits.max_reconfigs} reconfigurations"}
                return
            request = None if self.mode.drop_request_how else terminal.request
            try:
                config, call = self._configure(task, state, request)
            except (EngineOutputInvalid, BackendError) as exc:
                traj.status, traj.failure = "aborted", {"kind": _failure_kind(exc), "detail": str(exc)}
                return

    def _metrics(self, traj: Trajectory, state: RunState) -> dict:
        adopted = [s.engine.adopted for s in traj.stages if s.engine is not None and s.engine.adopted is not None]
        return {
            "stages": len(traj.stages),
            "steps": sum(len(s.trace.steps) for s in traj.stages),
            "completions": state.completions,
            "reconfigs": state.reconfigs,
            "max_prompt_tokens": state.max_prompt_tokens,
            "total_tokens": state.total_tokens,
            "cleanups": sum(len(s.cleanups) for s in traj.stages),
            "adoption_rate": (sum(adopted) / len(adopted)) if adopted else None,
        }


def _logprob_bundle(traj: Trajectory) -> Optional[LogprobBundle]:
    if not traj.stages or any(s.engine is None or s.engine.logprob is None for s in traj.stages):
        return None
    stage_lps = []
    for stage in traj.stages:
        values = [s.logprob for s in stage.trace.steps]
        terminal = stage.trace.terminal
        if terminal is not None and terminal.raw:
            values.append(terminal.logprob)
        if any(v is None for v in values):
            return None
        total = 0.0
        for v in values:
            total += v
        stage_lps.append(total)
    engine_lps = [s.engine.logprob for s in traj.stages]
    return LogprobBundle(init=engine_lps[0], stages=tuple(stage_lps), reconfigs=tuple(engine_lps[1:]))
