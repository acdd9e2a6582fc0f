"""The reconfiguration engine: turns a request plus the history pool into the next stage configuration."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from typing import Optional

from .config import (
    MIN_ENGINE_TOOLS,
    GlobalHistoryPool,
    GlobalToolPool,
    ReconfigRequest,
    StageConfiguration,
    resolve_knowledge,
    validate_toolbox,
)
from .errors import EngineOutputInvalid, NoStructuredBlock, ToolboxError, TooFewTools
from .llm import ChatMessage, SamplingParams
from .prompts import TemplateSet, render_reconfig_prompt
from .trajectory import EngineCall

logger = logging.getLogger(__name__)

ENGINE_KEYS = ("next_sub_goal", "execution_strategy", "toolbox", "inter_agent_knowledge")
COMPLETION_SENTINEL = "Task completed, use finish tool next"
_FENCE_RE = re.compile(r"```(?:json|JSON)?\s*\n?(.*?)```", re.DOTALL)


@dataclass(frozen=True)
class EngineOutput:
    next_sub_goal: str
    execution_strategy: str
    toolbox: tuple
    inter_agent_knowledge: str

    def to_dict(self) -> dict:
        return {
            "next_sub_goal": self.next_sub_goal,
            "execution_strategy": self.execution_strategy,
            "toolbox": list(self.toolbox),
            "inter_agent_knowledge": self.inter_agent_knowledge,
        }


def _balanced_object(text: str, start: int) -> Optional[str]:
    depth = 0
    in_string = False
    escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
        elif ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[start : i + 1]
    return None


def extract_structured_block(text: str) -> dict:
    """First balanced JSON object in ``text``; markdown fences are looked inside first."""
    candidates = [m.group(1) for m in _FENCE_RE.finditer(text)] + [text]
    for chunk in candidates:
        pos = chunk.find("{")
        while pos != -1:
            block = _balanced_object(chunk, pos)
            if block is not None:
                try:
                    value = json.loads(block)
                except json.JSONDecodeError:
                    value = None
                if isinstance(value, dict):
                    return value
            pos = chunk.find("{", pos + 1)
    raise NoStructuredBlock("no JSON object found in engine output")


def parse_engine_output(
    record: dict,
    pool: GlobalToolPool,
    initial: bool,
    strict_min_tools: bool = False,
) -> tuple:
    """Validate a decoded engine record. Returns ``(EngineOutput, warnings)``.

    Raises ``EngineOutputInvalid`` with a reason the model can act on.
    """
    warnings = []
    missing = [k for k in ENGINE_KEYS if k not in record]
    if missing:
        raise EngineOutputInvalid(f"missing keys: {', '.join(missing)}")
    extra = sorted(set(record) - set(ENGINE_KEYS))
    if extra:
        raise EngineOutputInvalid(f"unexpected keys: {', '.join(extra)}")
    for key in ("next_sub_goal", "execution_strategy", "inter_agent_knowledge"):
        if not isinstance(record[key], str):
            raise EngineOutputInvalid(f"{key} must be a string")
    if not record["next_sub_goal"].strip():
        raise EngineOutputInvalid("next_sub_goal is empty")
    if not isinstance(record["toolbox"], list) or not all(isinstance(t, str) for t in record["toolbox"]):
        raise EngineOutputInvalid("toolbox must be a list of tool names")
    try:
        toolbox = validate_toolbox(record["toolbox"], pool, enforce_min=strict_min_tools)
    except ToolboxError as exc:
        raise EngineOutputInvalid(str(exc)) from exc
    minimum = min(MIN_ENGINE_TOOLS, len(pool))
    if len(toolbox) < minimum:
        warnings.append(str(TooFewTools(len(toolbox), minimum)))
    knowledge = record["inter_agent_knowledge"]
    if initial and knowledge != "":
        warnings.append(f"initial configuration must carry empty knowledge; got {knowledge[:40]!r}, using ''")
        knowledge = ""
    for w in warnings:
        logger.warning(w)
    out = EngineOutput(record["next_sub_goal"], record["execution_strategy"], toolbox, knowledge)
    return out, tuple(warnings)


def corrective_message(reason: str) -> str:
    return (
        f"Your previous output was invalid: {reason}. "
        "Respond again with only a strict JSON object with exactly the keys "
        "next_sub_goal, execution_strategy, toolbox, inter_agent_knowledge. "
        "The toolbox must contain only names from <available_tools>."
    )


@dataclass(frozen=True)
class EngineResult:
    config: StageConfiguration
    call: EngineCall


class ReconfigEngine:
    """Calls the backend with the engine prompt and validates what comes back.

    Malformed output gets up to ``max_reprompts`` corrective follow-ups before
    ``EngineOutputInvalid`` is raised. ``strict_min_tools`` turns the
    at-least-three-tools rule from a warning into a rejection.
    """

    def __init__(
        self,
        backend,
        pool: GlobalToolPool,
        params: Optional[SamplingParams] = None,
        templates: Optional[TemplateSet] = None,
        max_reprompts: int = 2,
        strict_min_tools: bool = False,
        counter=None,
    ):
        self.backend = backend
        self.pool = pool
        self.params = params or SamplingParams.runtime()
        self.templates = templates
        self.max_reprompts = max_reprompts
        self.strict_min_tools = strict_min_tools
        self.counter = counter
        self.usage = []  # (prompt_tokens, output_tokens) per completion

    def run(self, task: str, history: GlobalHistoryPool, request: Optional[ReconfigRequest] = None) -> EngineResult:
        initial = len(history) == 0
        bundle = render_reconfig_prompt(task, self.pool, history, request, self.templates)
        base = bundle.messages()
        messages = list(base)
        reason = None
        for attempt in range(1, self.max_reprompts + 2):
            completion = self.backend.complete(messages, self.params)
            self.usage.append((completion.prompt_tokens, completion.output_tokens))
            try:
                record = extract_structured_block(completion.text)
                output, warnings = parse_engine_output(record, self.pool, initial, self.strict_min_tools)
            except (NoStructuredBlock, EngineOutputInvalid) as exc:
                reason = exc.reason if isinstance(exc, EngineOutputInvalid) else str(exc)
                logger.warning("engine attempt %d rejected: %s", attempt, reason)
                messages = messages + [
                    ChatMessage("assistant", completion.text),
                    ChatMessage("user", corrective_message(reason)),
                ]
                continue
            config = StageConfiguration(
                stage_index=len(history),
                sub_goal=output.next_sub_goal,
                strategy=output.execution_strategy,
                toolbox=output.toolbox,
                knowledge=resolve_knowledge(output.inter_agent_knowledge, history),
            )
            adopted = None if request is None else output.next_sub_goal == request.proposed_sub_goal
            call = EngineCall(
                messages=tuple(m.to_dict() for m in base),
                output_text=completion.text,
                output=output.to_dict(),
                attempts=attempt,
                adopted=adopted,
                warnings=warnings,
                logprob=completion.logprob,
            )
            return EngineResult(config, call)
        raise EngineOutputInvalid(f"{reason} (after {self.max_reprompts} corrective re-prompts)")


def reconfigure(
    task: str,
    pool: GlobalToolPool,
    history: GlobalHistoryPool,
    request: Optional[ReconfigRequest],
    backend,
    params: Optional[SamplingParams] = None,
    **kw,
) -> StageConfiguration:
    """Functional form of :meth:`ReconfigEngine.run` returning only the configuration."""
    return ReconfigEngine(backend, pool, params, **kw).run(task, history, request).config
