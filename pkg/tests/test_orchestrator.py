import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import POOL
from toolself.codec import ToolCall
from toolself.llm import ApproxTokenCounter, ScriptedBackend, SamplingParams
from toolself.orchestrator import (
    GENERIC_STRATEGY,
    MODES,
    AblationMode,
    ContextBudget,
    Orchestrator,
    RunLimits,
    apply_context_policy,
    steps_tokens,
)
from toolself.scenarios import engine_text, finish_turn, reconfigure_turn, tool_turn
from toolself.tools.registry import MockEnvironment, Observation, ToolRegistry
from toolself.trajectory import Step

BOX = ["search", "visit", "code_interpreter"]
CONFIG = engine_text("Do the thing.", "Carefully.", BOX)


def registry():
    return ToolRegistry.mock([POOL.schema(n) for n in POOL.names], MockEnvironment(default_body="ok"))


def orchestrator(inference, engine=(CONFIG,), logprobs=False, **kw):
    if logprobs:
        inference = [{"text": t, "token_logprobs": [["x", -0.5]]} for t in inference]
        engine = [{"text": t, "token_logprobs": [["x", -0.25]]} for t in engine]
    return Orchestrator(ScriptedBackend(inference), registry(), engine_backend=ScriptedBackend(engine), **kw)


def code(i=1):
    return tool_turn(f"step {i}", "code_interpreter", {"code": f"print({i})"})


def make_step(i, body_len=100, raw_len=40):
    return Step(f"t{i}", ToolCall("search", {"query": [str(i)]}), Observation("b" * body_len), raw="r" * raw_len)


def test_parameter_validation():
    with pytest.raises(ValueError):
        RunLimits(max_iterations=0)
    with pytest.raises(ValueError):
        ContextBudget(cleanup_trigger_ratio=0)
    with pytest.raises(ValueError):
        AblationMode(disable={"mood"})
    with pytest.raises(ValueError):
        AblationMode(fixed_interval_when=0)
    assert ContextBudget().trigger_threshold == 25600
    for mode in MODES.values():
        assert AblationMode.from_dict(mode.to_dict()) == mode


def test_context_policy_below_threshold_is_identity():
    steps = [make_step(i) for i in range(30)]
    assert apply_context_policy(steps, 0, ContextBudget(max_context_tokens=10_000)) == steps


def test_context_policy_keeps_last_k():
    steps = [make_step(i) for i in range(30)]
    budget = ContextBudget(max_context_tokens=1000, cleanup_trigger_ratio=0.5, keep_last_iterations=10)
    assert steps_tokens(steps) >= 500
    assert apply_context_policy(steps, 0, budget) == steps[-10:]


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(min_value=0, max_value=25),
    prefix=st.integers(min_value=0, max_value=900),
    body=st.integers(min_value=1, max_value=3000),
    keep=st.integers(min_value=1, max_value=12),
)
def test_context_policy_properties(n, prefix, body, keep):
    budget = ContextBudget(max_context_tokens=1000, cleanup_trigger_ratio=0.8, keep_last_iterations=keep)
    steps = [make_step(i, body_len=body) for i in range(n)]
    out = apply_context_policy(steps, prefix, budget)
    if prefix + steps_tokens(steps) < budget.trigger_threshold:
        assert out == steps
        return
    assert len(out) <= min(n, keep)
    # survivors are a suffix of the input, except that the lone newest step may be cut down
    if len(out) > 1 or (out and out[0] == steps[-1]):
        assert out == steps[len(steps) - len(out):]
    if out and prefix + 40 < budget.max_context_tokens - 40:
        assert prefix + steps_tokens(out) <= budget.max_context_tokens or len(out) == 1


def test_swe_mode_caps_and_compresses():
    budget = ContextBudget(swe_mode=True, swe_char_cap=500, swe_keep_observations=2)
    steps = [make_step(i, body_len=900) for i in range(4)]
    out = apply_context_policy(steps, 0, budget)
    assert out[0].observation.body.startswith("Old environment output:")
    assert len(out[2].observation.body) == 500
    assert out[3] == steps[3]


def test_simple_run_metrics_and_metadata():
    orch = orchestrator([code(1), code(2), finish_turn("42")], clock=lambda: "T")
    traj = orch.run_task("compute", trajectory_id="abc")
    assert traj.trajectory_id == "abc" and traj.status == "finished"
    assert traj.final_result == "42"
    assert traj.metrics["completions"] == 3 and traj.metrics["steps"] == 2 and traj.metrics["stages"] == 1
    assert traj.metadata["started_at"] == traj.metadata["finished_at"] == "T"
    assert traj.logprobs is None


def test_reconfigure_builds_history_and_fresh_context():
    inference = [code(1), reconfigure_turn("did part one", "part two"), code(2), finish_turn("x")]
    engine = [CONFIG, engine_text("part two", "go", BOX, "ALL")]
    orch = orchestrator(inference, engine)
    traj = orch.run_task("t")
    assert traj.status == "finished" and len(traj.stages) == 2
    second = traj.stages[1]
    assert second.config.knowledge == "Iteration 1:\nSub-goal: Do the thing.\nSummary: did part one"
    assert second.engine.adopted is True
    messages = orch.backend.calls[2][0]
    assert len(messages) == 2  # stage-local transcript was dropped
    assert "did part one" in messages[0].content


def test_tool_outside_toolbox_is_an_error_observation():
    orch = orchestrator([tool_turn("bash", "execute_bash", {"command": "ls"}), finish_turn("x")])
    traj = orch.run_task("t")
    body = traj.stages[0].trace.steps[0].observation.body
    assert body.startswith("Error: tool 'execute_bash' is not in the current toolbox")


def test_three_bad_completions_abort():
    orch = orchestrator(["garbage", "<tool_call>{}</tool_call>", "still garbage"])
    traj = orch.run_task("t")
    assert traj.status == "aborted" and traj.failure["kind"] == "unparseable_output"
    # each retry sees the bad output and a corrective note
    assert len(orch.backend.calls[2][0]) == 6


def test_bad_completion_then_recovery():
    orch = orchestrator(["garbage", finish_turn("ok")])
    traj = orch.run_task("t")
    assert traj.status == "finished"


def test_withheld_reconfigure_gets_corrective_message():
    orch = orchestrator([reconfigure_turn("s", "g"), finish_turn("ok")], mode=AblationMode(allow_reconfigure=False))
    traj = orch.run_task("t")
    assert traj.status == "finished" and len(traj.stages) == 1
    assert "not available" in orch.backend.calls[1][0][-1].content


def test_backend_failure_aborts():
    orch = orchestrator([code(1)])
    traj = orch.run_task("t")
    assert traj.status == "aborted" and traj.failure["kind"] == "backend_unavailable"


def test_engine_failure_aborts():
    traj = orchestrator([finish_turn("x")], engine=["junk"] * 3).run_task("t")
    assert traj.status == "aborted" and traj.failure["kind"] == "engine_output_invalid"


def test_iteration_limit():
    orch = orchestrator([code(i) for i in range(10)], limits=RunLimits(max_iterations=4))
    traj = orch.run_task("t")
    assert traj.status == "limit_exceeded" and traj.metrics["completions"] == 4


def test_pins_for_disabled_components():
    engine = [engine_text("narrow", "special", ["search", "visit", "code_interpreter"], "")]
    orch = orchestrator([finish_turn("x")], engine, mode=AblationMode(disable={"sub_goal", "strategy", "toolbox"}))
    config = orch.run_task("the task").stages[0].config
    assert (config.sub_goal, config.strategy, config.toolbox) == ("the task", GENERIC_STRATEGY, POOL.names)


def test_static_mode_skips_engine():
    orch = orchestrator([finish_turn("x")], engine=[], mode=MODES["static"])
    traj = orch.run_task("t")
    assert traj.status == "finished" and traj.stages[0].engine is None
    assert orch.engine_backend.position == 0
    assert '"name": "reconfigure"' not in orch.backend.calls[0][0][1].content


def test_logprob_bundle_assembled():
    inference = [code(1), reconfigure_turn("s", "g"), finish_turn("x")]
    traj = orchestrator(inference, [CONFIG, CONFIG], logprobs=True).run_task("t")
    assert traj.logprobs.init == -0.25
    assert traj.logprobs.stages == (-1.0, -0.5)
    assert traj.logprobs.reconfigs == (-0.25,)


def test_context_cleanup_recorded():
    inference = [code(i) for i in range(12)] + [finish_turn("x")]
    budget = ContextBudget(max_context_tokens=3000, cleanup_trigger_ratio=0.5, keep_last_iterations=3)
    orch = orchestrator(inference, budget=budget, counter=ApproxTokenCounter())
    traj = orch.run_task("t")
    assert traj.status == "finished"
    assert traj.metrics["cleanups"] > 0
    for ordinal, before, after in traj.stages[0].cleanups:
        assert before >= budget.trigger_threshold and after <= before


def test_sampling_params_forwarded():
    params = SamplingParams.exploration(model_id="m")
    orch = orchestrator([finish_turn("x")], params=params)
    traj = orch.run_task("t")
    assert orch.backend.calls[0][1] is params
    assert traj.metadata["sampling"] == {"temperature": 0.7, "top_p": 0.9}
