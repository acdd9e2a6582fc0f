"""Builders shared by the test modules."""

import functools
import json
import random

from toolself.codec import ToolCall
from toolself.config import ExecutionSummary, ReconfigRequest, StageConfiguration, default_tool_pool
from toolself.orchestrator import Orchestrator
from toolself.scenarios import load_scenario
from toolself.tools.registry import Observation
from toolself.trajectory import EngineCall, LogprobBundle, StageOutcome, StageRecord, Step, Trajectory

ACCEPTANCE_LINES = {}  # criterion number -> printed line

POOL = default_tool_pool()
TOOLS = POOL.names


def run_scenario(name, **kw):
    scenario = load_scenario(name)
    inference, engine = scenario.backends(strict=kw.pop("strict", True))
    orch = Orchestrator(inference, scenario.registry(), engine_backend=engine, **kw)
    return orch.run_task(scenario.task), inference, engine


@functools.lru_cache(maxsize=None)
def _golden(name):
    return run_scenario(name)[0]


def golden(name):
    """Golden run, computed once per session; callers must not mutate it."""
    return _golden(name)


def synthetic_trajectory(rng: random.Random, n_stages: int, label=None, with_logprobs=True, tid=None) -> Trajectory:
    """A structurally valid trajectory with random content; no backend involved."""
    stages = []
    for i in range(n_stages):
        box = tuple(rng.sample(TOOLS, rng.randint(1, len(TOOLS))))
        config = StageConfiguration(i, f"goal {i} {rng.random():.6f}", f"strategy {i}", box, "" if i == 0 else "ALL-expanded")
        steps = []
        for k in range(rng.randint(0, 4)):
            tool = rng.choice(box)
            steps.append(
                Step(
                    thought=f"t{i}.{k}",
                    call=ToolCall(tool, {"x": rng.randint(0, 99)}),
                    observation=Observation(f"obs {rng.random()}", source_tool=tool),
                    raw=f"<think>t{i}.{k}</think>\n<tool_call>\n{{}}\n</tool_call>",
                    logprob=-rng.random() if with_logprobs else None,
                )
            )
        if i < n_stages - 1:
            terminal = StageOutcome(
                "reconfigured",
                summary=ExecutionSummary(i, config.sub_goal, f"summary {i}"),
                request=ReconfigRequest(f"goal {i + 1}", "next"),
                raw="<think>r</think>",
                logprob=-rng.random() if with_logprobs else None,
            )
        else:
            terminal = StageOutcome("finished", final={"final_result": "x"}, raw="<think>f</think>", logprob=-rng.random() if with_logprobs else None)
        engine = EngineCall(
            messages=({"role": "system", "content": f"engine {i}"}, {"role": "user", "content": "go"}),
            output_text="{}",
            output={"next_sub_goal": config.sub_goal, "execution_strategy": config.strategy, "toolbox": list(box), "inter_agent_knowledge": ""},
            logprob=-rng.random() if with_logprobs else None,
        )
        record = StageRecord(config=config, engine=engine, prompt=({"role": "system", "content": f"sys {i}"}, {"role": "user", "content": "u"}))
        record.trace.steps.extend(steps)
        record.trace.terminal = terminal
        stages.append(record)
    traj = Trajectory(tid or f"t{rng.getrandbits(32):08x}", "task", stages)
    if with_logprobs:
        stage_lps = []
        for s in stages:
            total = 0.0
            for v in [st.logprob for st in s.trace.steps] + [s.trace.terminal.logprob]:
                total += v
            stage_lps.append(total)
        traj.logprobs = LogprobBundle(stages[0].engine.logprob, tuple(stage_lps), tuple(s.engine.logprob for s in stages[1:]))
    if label is not None:
        traj = traj.with_label(label)
    return traj


def canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False)
