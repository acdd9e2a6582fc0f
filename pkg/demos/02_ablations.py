"""
Ablation modes
==============

Each mode removes one part of self-reconfiguration. ``wo-when`` replaces the
agent's own timing with a reconfiguration every five tool steps; ``wo-how``
hides the agent's request from the engine; ``static`` pins everything and
never reconfigures.
"""

from toolself import MODES, Orchestrator, load_scenario
from toolself.scenarios import linear_scenario

for name, mode in MODES.items():
    print(f"{name:12s}", mode.to_dict())


def run(scenario, mode_name):
    # non-strict scripts: prompts differ between modes, so no prompt assertions
    inference, engine = scenario.backends(strict=False)
    orch = Orchestrator(inference, scenario.registry(), engine_backend=engine, mode=MODES[mode_name])
    return orch.run_task(scenario.task)


# a single-stage, seven-step script: only forced reconfiguration can split it
seven = linear_scenario(7)
for mode_name in ("full", "wo-when"):
    t = run(seven, mode_name)
    print(mode_name, "stages:", [len(s.trace.steps) for s in t.stages], "reconfigs:", t.metrics["reconfigs"])

# the same comparison on a packaged scenario, across every mode
case2 = load_scenario("case2_asean")
for mode_name in MODES:
    t = run(case2, mode_name)
    ok = (t.final_result or "").strip() == case2.expected_final
    print(f"{mode_name:12s} {t.status:15s} correct={ok!s:5s} stages={t.metrics['stages']} tokens={t.metrics['total_tokens']}")

# under static mode the engine is never consulted
t = run(case2, "static")
print("engine calls in static mode:", sum(s.engine is not None for s in t.stages))
