"""Stage configurations, reconfiguration requests, and the global tool and history pools."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable

from .codec import ToolSchema
from .errors import InvalidConfiguration, ReservedTool, TooFewTools, UnknownTool

RECONFIGURE = "reconfigure"
FINISH = "finish"
MANAGEMENT_TOOLS = (RECONFIGURE, FINISH)
UPDATE_CONTENT_VALUES = ("sub_goal", "toolbox", "knowledge", "execution_strategy")
DETAIL_FIELDS = ("toolbox_requirements", "knowledge_requirements", "execution_strategy_requirements")
KNOWLEDGE_ALL = "ALL"
MIN_ENGINE_TOOLS = 3


@dataclass(frozen=True)
class StageConfiguration:
    stage_index: int
    sub_goal: str
    strategy: str
    toolbox: tuple = ()
    knowledge: str = ""

    def __post_init__(self):
        if self.stage_index < 0:
            raise InvalidConfiguration("stage_index must be non-negative")
        object.__setattr__(self, "toolbox", tuple(self.toolbox))
        if len(set(self.toolbox)) != len(self.toolbox):
            raise InvalidConfiguration(f"duplicate tools in toolbox: {list(self.toolbox)}")
        for name in self.toolbox:
            if name in MANAGEMENT_TOOLS:
                raise ReservedTool(name)

    def to_dict(self) -> dict:
        return {
            "stage_index": self.stage_index,
            "sub_goal": self.sub_goal,
            "strategy": self.strategy,
            "toolbox": list(self.toolbox),
            "knowledge": self.knowledge,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StageConfiguration":
        return cls(
            stage_index=data["stage_index"],
            sub_goal=data["sub_goal"],
            strategy=data["strategy"],
            toolbox=tuple(data["toolbox"]),
            knowledge=data.get("knowledge", ""),
        )


@dataclass(frozen=True)
class ReconfigRequest:
    """What the agent asks for when it calls ``reconfigure``.

    ``update_content`` is kept for analysis only; the engine never sees it.
    """

    proposed_sub_goal: str
    update_reason: str
    update_content: str = "sub_goal"
    details: tuple = ()  # sorted (field, text) pairs; a tuple keeps the type hashable

    def __post_init__(self):
        if not self.proposed_sub_goal.strip():
            raise InvalidConfiguration("proposed_sub_goal must be non-empty")
        if not self.update_reason.strip():
            raise InvalidConfiguration("update_reason must be non-empty")
        if self.update_content not in UPDATE_CONTENT_VALUES:
            raise InvalidConfiguration(f"update_content {self.update_content!r} not allowed")
        details = dict(self.details)
        unknown = set(details) - set(DETAIL_FIELDS)
        if unknown:
            raise InvalidConfiguration(f"unknown detail fields: {sorted(unknown)}")
        object.__setattr__(self, "details", tuple((k, details[k]) for k in DETAIL_FIELDS if k in details))

    @property
    def detail_map(self) -> dict:
        return dict(self.details)

    @classmethod
    def from_arguments(cls, args: dict) -> "ReconfigRequest":
        """Build from the ``reconfigure`` tool-call arguments."""
        return cls(
            proposed_sub_goal=args["new_sub_goal"],
            update_reason=args["update_reason"],
            update_content=args.get("update_content", "sub_goal"),
            details=tuple((args.get("additional_details") or {}).items()),
        )

    def to_arguments(self, execution_summary: str) -> dict:
        args = {
            "execution_summary": execution_summary,
            "update_content": self.update_content,
            "update_reason": self.update_reason,
            "new_sub_goal": self.proposed_sub_goal,
        }
        if self.details:
            args["additional_details"] = self.detail_map
        return args

    def to_dict(self) -> dict:
        return {
            "proposed_sub_goal": self.proposed_sub_goal,
            "update_reason": self.update_reason,
            "update_content": self.update_content,
            "details": self.detail_map,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ReconfigRequest":
        return cls(
            proposed_sub_goal=data["proposed_sub_goal"],
            update_reason=data["update_reason"],
            update_content=data.get("update_content", "sub_goal"),
            details=tuple((data.get("details") or {}).items()),
        )


@dataclass(frozen=True)
class ExecutionSummary:
    stage_index: int
    sub_goal: str
    summary: str

    def __post_init__(self):
        if not self.summary.strip():
            raise InvalidConfiguration("execution summary must be non-empty")

    def to_dict(self) -> dict:
        return {"stage_index": self.stage_index, "sub_goal": self.sub_goal, "summary": self.summary}

    @classmethod
    def from_dict(cls, data: dict) -> "ExecutionSummary":
        return cls(data["stage_index"], data["sub_goal"], data["summary"])


class GlobalHistoryPool:
    """Append-only sequence of per-stage execution summaries."""

    def __init__(self, entries: Iterable[ExecutionSummary] = ()):
        self._entries: list = []
        for entry in entries:
            self.append(entry)

    def append(self, entry: ExecutionSummary) -> None:
        expected = len(self._entries)
        if entry.stage_index != expected:
            raise InvalidConfiguration(
                f"history entry for stage {entry.stage_index} out of order, expected {expected}"
            )
        self._entries.append(entry)

    @property
    def entries(self) -> tuple:
        return tuple(self._entries)

    def __len__(self):
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def __bool__(self):
        return bool(self._entries)

    def copy(self) -> "GlobalHistoryPool":
        return GlobalHistoryPool(self._entries)


@dataclass(frozen=True)
class GlobalToolPool:
    """Task tools by name plus the two always-available management tools."""

    tools: dict = field(default_factory=dict)
    management: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in MANAGEMENT_TOOLS:
            if name not in self.management:
                raise InvalidConfiguration(f"pool lacks management tool {name!r}")
            if name in self.tools:
                raise InvalidConfiguration(f"{name!r} cannot also be a task tool")

    @property
    def names(self) -> tuple:
        return tuple(self.tools)

    def __contains__(self, name):
        return name in self.tools

    def __len__(self):
        return len(self.tools)

    def schema(self, name: str) -> ToolSchema:
        if name in self.tools:
            return self.tools[name]
        if name in self.management:
            return self.management[name]
        raise UnknownTool(name)

    def restrict(self, names: Iterable[str]) -> "GlobalToolPool":
        """A pool holding only ``names`` (used for small test pools)."""
        wanted = list(names)
        for name in wanted:
            if name not in self.tools:
                raise UnknownTool(name)
        return GlobalToolPool({n: self.tools[n] for n in wanted}, dict(self.management))

    def __hash__(self):
        return hash((tuple(self.tools.items()), tuple(self.management.items())))


def load_tool_schemas(path=None) -> tuple:
    """Read a schema asset; returns ``(task_schemas, management_schemas)`` as name-keyed dicts."""
    if path is None:
        text = resources.files("toolself").joinpath("assets/tool_schemas.json").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    data = json.loads(text)
    task = {d["name"]: ToolSchema.from_dict(d) for d in data["task_tools"]}
    mgmt = {d["name"]: ToolSchema.from_dict(d) for d in data["management_tools"]}
    return task, mgmt


def default_tool_pool() -> GlobalToolPool:
    task, mgmt = load_tool_schemas()
    return GlobalToolPool(task, mgmt)


def validate_toolbox(proposed, pool: GlobalToolPool, enforce_min: bool = False) -> tuple:
    """Check a proposed toolbox against the pool.

    Returns the names de-duplicated with first-seen order kept. With
    ``enforce_min`` the box must hold at least three task tools, relaxed to
    the pool size when the pool itself is smaller.
    """
    if not len(pool):
        raise InvalidConfiguration("tool pool is empty")
    seen = []
    for name in proposed:
        if name in MANAGEMENT_TOOLS:
            raise ReservedTool(name)
        if name not in pool:
            raise UnknownTool(name)
        if name not in seen:
            seen.append(name)
    if enforce_min:
        minimum = min(MIN_ENGINE_TOOLS, len(pool))
        if len(seen) < minimum:
            raise TooFewTools(len(seen), minimum)
    return tuple(seen)


def resolve_knowledge(directive: str, pool: GlobalHistoryPool) -> str:
    """Turn the engine's knowledge directive into the knowledge text for the next stage.

    ``""`` stays empty, the exact string ``"ALL"`` expands to the serialized
    history, and anything else is already the summary to use.
    """
    if directive == "":
        return ""
    if directive == KNOWLEDGE_ALL:
        from .prompts import serialize_history

        return serialize_history(pool)
    return directive
