"""Renders the inference and reconfiguration prompts and serializes the history pool."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Optional, Sequence

from .codec import ToolSchema
from .config import (
    MANAGEMENT_TOOLS,
    GlobalHistoryPool,
    GlobalToolPool,
    ReconfigRequest,
    StageConfiguration,
)
from .errors import MissingSchema

TEMPLATE_ROLES = (
    "inference_system",
    "reconfig_system",
    "react_user_prefix",
    "react_user_suffix",
    "reconfig_user",
)
NONE_SLOT = "NONE"
_PLACEHOLDER = re.compile(r"\{([A-Z][A-Z_]*)\}")


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    user_prefix: str
    user_suffix: str = ""
    tool_block: str = ""

    @property
    def user_text(self) -> str:
        return "\n\n".join(part for part in (self.user_prefix, self.tool_block, self.user_suffix) if part)

    def messages(self) -> list:
        from .llm import ChatMessage

        return [ChatMessage("system", self.system_text), ChatMessage("user", self.user_text)]


def _normalize(text: str) -> str:
    return text.replace("\r\n", "\n").replace("\r", "\n")


@lru_cache(maxsize=None)
def _packaged_template(role: str) -> str:
    text = resources.files("toolself").joinpath(f"assets/templates/{role}.txt").read_text("utf-8")
    return _normalize(text).rstrip("\n")


class TemplateSet:
    """Template text keyed by role; defaults to the packaged assets.

    Pass ``directory`` to load an alternative set (same file names).
    """

    def __init__(self, directory=None, overrides: Optional[dict] = None):
        self._texts = {}
        for role in TEMPLATE_ROLES:
            if directory is not None:
                with open(f"{directory}/{role}.txt", encoding="utf-8") as fh:
                    self._texts[role] = _normalize(fh.read()).rstrip("\n")
            else:
                self._texts[role] = _packaged_template(role)
        for role, text in (overrides or {}).items():
            if role not in TEMPLATE_ROLES:
                raise KeyError(role)
            self._texts[role] = _normalize(text)

    def __getitem__(self, role: str) -> str:
        return self._texts[role]


@lru_cache(maxsize=None)
def _default_templates() -> TemplateSet:
    return TemplateSet()


def _templates(templates: Optional[TemplateSet]) -> TemplateSet:
    return templates if templates is not None else _default_templates()


def fill(template: str, values: dict) -> str:
    """Single-pass placeholder substitution; substituted text is never rescanned."""

    def sub(match):
        key = match.group(1)
        return values[key] if key in values else match.group(0)

    filled = _PLACEHOLDER.sub(sub, template)
    leftover = [k for k in _PLACEHOLDER.findall(template) if k not in values]
    if leftover:
        raise KeyError(f"unfilled placeholders: {leftover}")
    return filled


def serialize_history(pool: GlobalHistoryPool) -> str:
    blocks = [
        f"Iteration {k}:\nSub-goal: {_normalize(e.sub_goal)}\nSummary: {_normalize(e.summary)}"
        for k, e in enumerate(pool, start=1)
    ]
    return "\n\n".join(blocks)


def render_tool_block(schemas: Sequence[ToolSchema]) -> str:
    lines = [json.dumps(s.to_dict(), ensure_ascii=False) for s in schemas]
    return "<tools>\n" + "\n".join(lines) + "\n</tools>"


def inference_schemas(config: StageConfiguration, pool: GlobalToolPool, include_reconfigure=True) -> list:
    """Schemas the agent sees in a stage: its toolbox, then the management tools."""
    names = list(config.toolbox) + [n for n in MANAGEMENT_TOOLS if include_reconfigure or n != "reconfigure"]
    schemas = []
    for name in names:
        if name in pool.tools:
            schemas.append(pool.tools[name])
        elif name in pool.management:
            schemas.append(pool.management[name])
        else:
            raise MissingSchema(name)
    return schemas


def render_inference_prompt(
    task: str,
    config: StageConfiguration,
    schemas: Sequence[ToolSchema],
    templates: Optional[TemplateSet] = None,
) -> PromptBundle:
    tpl = _templates(templates)
    by_name = {s.name: s for s in schemas}
    for name in config.toolbox:
        if name not in by_name:
            raise MissingSchema(name)
    system = fill(
        tpl["inference_system"],
        {
            "MAIN_TASK_CONTENT": _normalize(task),
            "SUB_GOAL_CONTENT": _normalize(config.sub_goal),
            "EXECUTION_STRATEGY": _normalize(config.strategy),
            "TOOLBOX_LIST": ", ".join(config.toolbox),
            "KNOWLEDGE_CONTENT": _normalize(config.knowledge),
        },
    )
    ordered = [by_name[n] for n in config.toolbox] + [
        by_name[n] for n in MANAGEMENT_TOOLS if n in by_name
    ]
    return PromptBundle(
        system_text=system,
        user_prefix=tpl["react_user_prefix"],
        user_suffix=tpl["react_user_suffix"],
        tool_block=render_tool_block(ordered),
    )


def render_request(request: ReconfigRequest) -> str:
    lines = [
        f"new_sub_goal: {_normalize(request.proposed_sub_goal)}",
        f"update_reason: {_normalize(request.update_reason)}",
    ]
    if request.details:
        lines.append("additional_details:")
        lines.extend(f"  {key}: {_normalize(text)}" for key, text in request.details)
    return "\n".join(lines)


def render_available_tools(pool: GlobalToolPool) -> str:
    return "\n".join(f"- {name}: {schema.description}" for name, schema in pool.tools.items())


def render_reconfig_prompt(
    task: str,
    pool: GlobalToolPool,
    history: GlobalHistoryPool,
    request: Optional[ReconfigRequest] = None,
    templates: Optional[TemplateSet] = None,
) -> PromptBundle:
    tpl = _templates(templates)
    system = fill(
        tpl["reconfig_system"],
        {
            "MAIN_TASK_CONTENT": _normalize(task),
            "ALL_AVAILABLE_TOOLS": render_available_tools(pool),
            "EXECUTION_HISTORY": serialize_history(history) if len(history) else NONE_SLOT,
            "UPDATE_REQUIREMENT": render_request(request) if request is not None else NONE_SLOT,
        },
    )
    return PromptBundle(system_text=system, user_prefix=tpl["reconfig_user"])
