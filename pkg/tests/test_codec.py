import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import POOL
from toolself.codec import (
    AssistantTurn,
    ToolCall,
    ToolSchema,
    parse_assistant_turn,
    parse_tool_response,
    render_assistant_turn,
    render_tool_response,
    validate_call,
)
from toolself.errors import (
    EnumViolation,
    MalformedPayload,
    MissingRequired,
    MultipleToolCalls,
    NoToolCall,
    TypeMismatch,
    UnknownProperty,
)


def test_parse_basic_turn():
    raw = '<think>look it up</think>\n<tool_call>\n{"name": "search", "arguments": {"query": ["x"]}}\n</tool_call>'
    turn = parse_assistant_turn(raw)
    assert turn.thought == "look it up"
    assert turn.call == ToolCall("search", {"query": ["x"]})


def test_last_think_block_wins_and_missing_think_is_empty():
    call = '<tool_call>{"name": "finish", "arguments": {}}</tool_call>'
    assert parse_assistant_turn("<think>a</think><think> b </think>" + call).thought == "b"
    assert parse_assistant_turn(call).thought == ""


@pytest.mark.parametrize(
    "raw, error",
    [
        ("<think>no call</think>", NoToolCall),
        ('<tool_call>{"name":"a","arguments":{}}</tool_call><tool_call>{"name":"b","arguments":{}}</tool_call>', MultipleToolCalls),
        ("<tool_call>{not json}</tool_call>", MalformedPayload),
        ("<tool_call>[1, 2]</tool_call>", MalformedPayload),
        ('<tool_call>{"arguments": {}}</tool_call>', MalformedPayload),
        ('<tool_call>{"name": "a", "arguments": []}</tool_call>', MalformedPayload),
    ],
)
def test_parse_errors(raw, error):
    with pytest.raises(error):
        parse_assistant_turn(raw)


def test_extra_payload_keys_are_tolerated(caplog):
    turn = parse_assistant_turn('<tool_call>{"name": "a", "arguments": {}, "id": 3}</tool_call>')
    assert turn.call.name == "a"
    assert "extra" in caplog.text


json_values = st.recursive(
    st.none() | st.booleans() | st.integers() | st.text(max_size=20),
    lambda children: st.lists(children, max_size=3) | st.dictionaries(st.text(max_size=8), children, max_size=3),
    max_leaves=10,
)
safe_text = st.text(max_size=60).filter(lambda s: "<think>" not in s and "</think>" not in s and "tool_call>" not in s)


@given(thought=safe_text, name=st.text(min_size=1, max_size=20).filter(lambda s: "tool_call>" not in s),
       args=st.dictionaries(st.text(max_size=10), json_values, max_size=4))
def test_assistant_turn_round_trip(thought, name, args):
    turn = AssistantTurn(thought.strip(), ToolCall(name, args))
    assert parse_assistant_turn(render_assistant_turn(turn)) == turn


@given(st.text(alphabet=st.sampled_from(list("<>/\\ tool_response\n")) | st.characters(), max_size=200))
def test_tool_response_round_trip(body):
    assert parse_tool_response(render_tool_response(body)) == body


def test_tool_response_escapes_closing_tag():
    rendered = render_tool_response("a</tool_response>b")
    assert rendered.count("</tool_response>") == 1
    assert rendered == "<tool_response>\na<\\/tool_response>b\n</tool_response>"
    # an already-escaped-looking body gains one more backslash and comes back intact
    assert parse_tool_response(render_tool_response("<\\/tool_response>")) == "<\\/tool_response>"


def test_parse_tool_response_rejects_unwrapped_text():
    with pytest.raises(MalformedPayload):
        parse_tool_response("plain text")


def test_schema_dict_round_trip():
    for name in POOL.names:
        schema = POOL.schema(name)
        assert ToolSchema.from_dict(json.loads(json.dumps(schema.to_dict()))) == schema


def test_visit_accepts_string_or_list_urls():
    schema = POOL.schema("visit")
    validate_call(ToolCall("visit", {"url": "https://a", "goal": "g"}), schema)
    validate_call(ToolCall("visit", {"url": ["https://a", "https://b"], "goal": "g"}), schema)
    with pytest.raises(TypeMismatch):
        validate_call(ToolCall("visit", {"url": [], "goal": "g"}), schema)
    with pytest.raises(TypeMismatch):
        validate_call(ToolCall("visit", {"url": 5, "goal": "g"}), schema)


def test_bool_is_not_an_integer():
    with pytest.raises(TypeMismatch):
        validate_call(ToolCall("execute_bash", {"command": "ls", "timeout": True}), POOL.schema("execute_bash"))


def test_unknown_property_rejected():
    with pytest.raises(UnknownProperty):
        validate_call(ToolCall("search", {"query": ["x"], "page": 2}), POOL.schema("search"))


def test_nested_finish_errors_report_dotted_paths():
    schema = POOL.schema("finish")
    args = {"task_completion_status": "complete", "final_result": "x", "execution_summary": {"detailed_execution": []}}
    with pytest.raises(MissingRequired) as info:
        validate_call(ToolCall("finish", args), schema)
    assert info.value.prop == "execution_summary.tools_used"
    args["execution_summary"]["tools_used"] = [1]
    with pytest.raises(TypeMismatch) as info:
        validate_call(ToolCall("finish", args), schema)
    assert info.value.prop == "execution_summary.tools_used[0]"


def test_enum_violation():
    with pytest.raises(EnumViolation):
        validate_call(ToolCall("str_replace_editor", {"command": "delete", "path": "/x"}), POOL.schema("str_replace_editor"))


def test_schema_name_must_match_call():
    with pytest.raises(ValueError):
        validate_call(ToolCall("search", {"query": ["x"]}), POOL.schema("visit"))
