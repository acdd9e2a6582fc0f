"""ReAct turn format: parsing assistant output, validating tool calls, wrapping observations."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from typing import Any

from .errors import (
    EnumViolation,
    MalformedPayload,
    MissingRequired,
    MultipleToolCalls,
    NoToolCall,
    TypeMismatch,
    UnknownProperty,
)

logger = logging.getLogger(__name__)

_THINK_RE = re.compile(r"<think>(.*?)</think>", re.DOTALL)
_TOOL_CALL_RE = re.compile(r"<tool_call>(.*?)</tool_call>", re.DOTALL)
_RESPONSE_OPEN = "<tool_response>\n"
_RESPONSE_CLOSE = "\n</tool_response>"
# "<" + k backslashes + "/tool_response>"; escaping adds one backslash, so k >= 1 marks an escaped tag.
_CLOSE_TAG_ESC = re.compile(r"<(\\*)/tool_response>")
_CLOSE_TAG_UNESC = re.compile(r"<\\(\\*)/tool_response>")


@dataclass(frozen=True)
class ToolSchema:
    """Declared interface of a callable tool, in the ``{"name", "description", "arguments"}`` shape."""

    name: str
    description: str
    parameters: dict = field(default_factory=dict)
    required: tuple = ()

    def __post_init__(self):
        missing = set(self.required) - set(self.parameters)
        if missing:
            raise ValueError(f"{self.name}: required names not declared: {sorted(missing)}")
        for prop, spec in self.parameters.items():
            if "enum" in spec and not spec["enum"]:
                raise ValueError(f"{self.name}.{prop}: empty enum")

    @classmethod
    def from_dict(cls, data: dict) -> "ToolSchema":
        args = data.get("arguments") or data.get("parameters") or {}
        return cls(
            name=data["name"],
            description=data.get("description", ""),
            parameters=dict(args.get("properties", {})),
            required=tuple(args.get("required", ())),
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "arguments": {
                "type": "object",
                "properties": self.parameters,
                "required": list(self.required),
            },
        }

    def __hash__(self):
        return hash((self.name, self.description, json.dumps(self.parameters, sort_keys=True), self.required))


@dataclass(frozen=True)
class ToolCall:
    name: str
    arguments: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "arguments": self.arguments}

    @classmethod
    def from_dict(cls, data: dict) -> "ToolCall":
        return cls(name=data["name"], arguments=dict(data.get("arguments", {})))

    def __hash__(self):
        return hash((self.name, json.dumps(self.arguments, sort_keys=True)))


@dataclass(frozen=True)
class AssistantTurn:
    thought: str
    call: ToolCall


def parse_assistant_turn(raw: str) -> AssistantTurn:
    """Extract the thought and the single tool call from one assistant completion.

    The last ``<think>`` block wins; a missing one yields an empty thought.

    Raises:
        NoToolCall: no ``<tool_call>`` block.
        MultipleToolCalls: more than one block.
        MalformedPayload: block is not JSON or lacks ``name``/``arguments``.
    """
    blocks = _TOOL_CALL_RE.findall(raw)
    if not blocks:
        raise NoToolCall("completion contains no <tool_call> block")
    if len(blocks) > 1:
        raise MultipleToolCalls(f"completion contains {len(blocks)} <tool_call> blocks")
    try:
        payload = json.loads(blocks[0].strip())
    except json.JSONDecodeError as exc:
        raise MalformedPayload(f"tool_call payload is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise MalformedPayload("tool_call payload must be an object")
    if not isinstance(payload.get("name"), str) or not payload["name"]:
        raise MalformedPayload("tool_call payload lacks a 'name' string")
    if not isinstance(payload.get("arguments"), dict):
        raise MalformedPayload("tool_call payload lacks an 'arguments' object")
    extra = set(payload) - {"name", "arguments"}
    if extra:
        logger.warning("ignoring extra tool_call keys: %s", sorted(extra))

    thoughts = _THINK_RE.findall(raw)
    thought = thoughts[-1].strip() if thoughts else ""
    return AssistantTurn(thought=thought, call=ToolCall(payload["name"], payload["arguments"]))


def render_assistant_turn(turn: AssistantTurn) -> str:
    payload = json.dumps(turn.call.to_dict(), ensure_ascii=False)
    return f"<think>{turn.thought}</think>\n<tool_call>\n{payload}\n</tool_call>"


def render_tool_response(observation: str) -> str:
    escaped = _CLOSE_TAG_ESC.sub(lambda m: "<\\" + m.group(1) + "/tool_response>", observation)
    return _RESPONSE_OPEN + escaped + _RESPONSE_CLOSE


def parse_tool_response(text: str) -> str:
    """Inverse of :func:`render_tool_response`."""
    if not (text.startswith(_RESPONSE_OPEN) and text.endswith(_RESPONSE_CLOSE)):
        raise MalformedPayload("text is not a <tool_response> block")
    body = text[len(_RESPONSE_OPEN) : len(text) - len(_RESPONSE_CLOSE)]
    return _CLOSE_TAG_UNESC.sub(lambda m: "<" + m.group(1) + "/tool_response>", body)


# -- validation ----------------------------------------------------------------

_TYPE_CHECKS = {
    "string": lambda v: isinstance(v, str),
    "integer": lambda v: isinstance(v, int) and not isinstance(v, bool),
    "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    "boolean": lambda v: isinstance(v, bool),
    "array": lambda v: isinstance(v, list),
    "object": lambda v: isinstance(v, dict),
    "null": lambda v: v is None,
}


def _check_value(path: str, value: Any, spec: dict) -> None:
    tags = spec.get("type")
    if tags is not None:
        tags = [tags] if isinstance(tags, str) else list(tags)
        if not any(_TYPE_CHECKS[t](value) for t in tags):
            raise TypeMismatch(path, "|".join(tags), value)
    if "enum" in spec and value not in spec["enum"]:
        raise EnumViolation(path, value, spec["enum"])
    if isinstance(value, list):
        if len(value) < spec.get("minItems", 0):
            raise TypeMismatch(path, f"array with at least {spec['minItems']} items", value)
        item_spec = spec.get("items")
        if item_spec:
            for i, item in enumerate(value):
                _check_value(f"{path}[{i}]", item, item_spec)
    elif isinstance(value, dict) and "properties" in spec:
        _check_object(path + ".", value, spec["properties"], spec.get("required", ()))


def _check_object(prefix: str, obj: dict, properties: dict, required) -> None:
    for name in required:
        if name not in obj:
            raise MissingRequired(prefix + name)
    for name, value in obj.items():
        if name not in properties:
            raise UnknownProperty(prefix + name)
        _check_value(prefix + name, value, properties[name])


def validate_call(call: ToolCall, schema: ToolSchema) -> ToolCall:
    """Check ``call.arguments`` against ``schema``; returns the call unchanged when valid.

    Nested object properties are checked recursively and reported with dotted
    paths (``execution_summary.tools_used``).
    """
    if call.name != schema.name:
        raise ValueError(f"schema {schema.name!r} does not describe call {call.name!r}")
    if not isinstance(call.arguments, dict):
        raise TypeMismatch("arguments", "object", call.arguments)
    _check_object("", call.arguments, schema.parameters, schema.required)
    return call
