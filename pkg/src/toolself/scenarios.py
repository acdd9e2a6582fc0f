"""Scripted scenarios: ordered completions for both backends plus a tool-response table."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

from .codec import AssistantTurn, ToolCall, render_assistant_turn
from .config import GlobalToolPool, default_tool_pool
from .errors import UnknownScenario
from .llm import ScriptedBackend, ScriptEntry
from .tools.registry import MockEnvironment, MockResponse, ToolRegistry


@dataclass
class Scenario:
    name: str
    task: str
    inference: list  # ScriptEntry-compatible items
    engine: list
    tools: list = field(default_factory=list)  # MockResponse dicts
    expected_final: Optional[str] = None
    default_body: str = "No results found."
    engine_default: Optional[str] = None
    inference_default: Optional[str] = None

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        return cls(
            name=d["name"],
            task=d["task"],
            inference=list(d["inference"]),
            engine=list(d["engine"]),
            tools=list(d.get("tools", ())),
            expected_final=d.get("expected_final"),
            default_body=d.get("default_body", "No results found."),
            engine_default=d.get("engine_default"),
            inference_default=d.get("inference_default"),
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "task": self.task,
            "expected_final": self.expected_final,
            "inference": self.inference,
            "engine": self.engine,
            "tools": self.tools,
            "default_body": self.default_body,
            "engine_default": self.engine_default,
            "inference_default": self.inference_default,
        }

    def backends(self, strict: bool = True, counter=None) -> tuple:
        """Fresh ``(inference, engine)`` scripted backends.

        With ``strict=False`` the prompt assertions are dropped, which is what
        ablation runs need since their prompts legitimately differ.
        """

        def entries(items):
            out = [ScriptEntry.coerce(i) for i in items]
            if not strict:
                out = [ScriptEntry(e.text, token_logprobs=e.token_logprobs) for e in out]
            return out

        inference = ScriptedBackend(entries(self.inference), f"{self.name}/inference", self.inference_default, counter)
        engine = ScriptedBackend(entries(self.engine), f"{self.name}/engine", self.engine_default, counter)
        return inference, engine

    def registry(self, pool: Optional[GlobalToolPool] = None) -> ToolRegistry:
        pool = pool or default_tool_pool()
        env = MockEnvironment([MockResponse.from_dict(r) for r in self.tools], self.default_body)
        return ToolRegistry.mock(pool.tools.values(), env)


def _asset_dir():
    return resources.files("toolself") / "assets" / "scenarios"


def scenario_names() -> list:
    return sorted(p.name[: -len(".json")] for p in _asset_dir().iterdir() if p.name.endswith(".json"))


def load_scenario(name_or_path) -> Scenario:
    """Load a packaged scenario by name, or any scenario file by path."""
    path = Path(str(name_or_path))
    if path.suffix == ".json" and path.is_file():
        return Scenario.from_dict(json.loads(path.read_text(encoding="utf-8")))
    asset = _asset_dir() / f"{name_or_path}.json"
    if not asset.is_file():
        raise UnknownScenario(str(name_or_path))
    return Scenario.from_dict(json.loads(asset.read_text(encoding="utf-8")))


def engine_text(sub_goal: str, strategy: str, toolbox, knowledge: str = "") -> str:
    record = {
        "next_sub_goal": sub_goal,
        "execution_strategy": strategy,
        "toolbox": list(toolbox),
        "inter_agent_knowledge": knowledge,
    }
    return json.dumps(record)


def tool_turn(thought: str, name: str, arguments: dict) -> str:
    return render_assistant_turn(AssistantTurn(thought, ToolCall(name, arguments)))


def finish_turn(final: str, thought: str = "Done.") -> str:
    return tool_turn(
        thought,
        "finish",
        {
            "task_completion_status": "complete",
            "final_result": final,
            "execution_summary": {"detailed_execution": [thought], "tools_used": []},
        },
    )


def reconfigure_turn(summary: str, new_sub_goal: str, reason: str = "Sub-goal complete.", details=None) -> str:
    args = {"execution_summary": summary, "update_content": "sub_goal", "update_reason": reason, "new_sub_goal": new_sub_goal}
    if details:
        args["additional_details"] = dict(details)
    return tool_turn("Moving on.", "reconfigure", args)


def linear_scenario(n_steps: int, name: str = "linear", final: str = "done", tool: str = "code_interpreter") -> Scenario:
    """One stage of ``n_steps`` task-tool calls followed by finish.

    Handy for timing ablations: the engine always answers with the same
    configuration, so any extra stages come from forced reconfiguration.
    """
    toolbox = ["search", "visit", "code_interpreter"]
    config = engine_text("Work through the task step by step.", "Use code_interpreter for each step.", toolbox)
    inference = [tool_turn(f"Step {i}.", tool, {"code": f"print({i})"}) for i in range(1, n_steps + 1)]
    inference.append(finish_turn(final))
    return Scenario(
        name=name,
        task=f"Run {n_steps} computation steps and report '{final}'.",
        inference=inference,
        engine=[config],
        tools=[{"tool": tool, "body": "ok", "repeat": True}],
        expected_final=final,
        default_body="ok",
        engine_default=config,
    )
