"""Agent runtime whose inference loop can rewrite its own sub-goal, strategy, toolbox, and knowledge."""

from .codec import AssistantTurn, ToolCall, ToolSchema, parse_assistant_turn, render_assistant_turn, validate_call
from .config import (
    ExecutionSummary,
    GlobalHistoryPool,
    GlobalToolPool,
    ReconfigRequest,
    StageConfiguration,
    default_tool_pool,
    resolve_knowledge,
    validate_toolbox,
)
from .engine import ReconfigEngine, reconfigure
from .ledger import KtoParams, assign_labels, export_datasets, filter_rft, kto_loss, load, persist, tool_usage_stats
from .llm import ChatMessage, Completion, OpenAICompatBackend, SamplingParams, ScriptedBackend
from .orchestrator import MODES, AblationMode, ContextBudget, Orchestrator, RunLimits, apply_context_policy
from .scenarios import Scenario, load_scenario, scenario_names
from .trajectory import Trajectory, trajectory_logprob

__version__ = "0.1.0"

__all__ = [
    "AblationMode",
    "AssistantTurn",
    "ChatMessage",
    "Completion",
    "ContextBudget",
    "ExecutionSummary",
    "GlobalHistoryPool",
    "GlobalToolPool",
    "KtoParams",
    "MODES",
    "OpenAICompatBackend",
    "Orchestrator",
    "ReconfigEngine",
    "ReconfigRequest",
    "RunLimits",
    "SamplingParams",
    "Scenario",
    "ScriptedBackend",
    "StageConfiguration",
    "ToolCall",
    "ToolSchema",
    "Trajectory",
    "apply_context_policy",
    "assign_labels",
    "default_tool_pool",
    "export_datasets",
    "filter_rft",
    "kto_loss",
    "load",
    "load_scenario",
    "scenario_names",
    "parse_assistant_turn",
    "persist",
    "reconfigure",
    "render_assistant_turn",
    "resolve_knowledge",
    "tool_usage_stats",
    "trajectory_logprob",
    "validate_call",
    "validate_toolbox",
]
