"""
Replaying a scripted multi-stage run
====================================

Both packaged scenarios run fully offline: a scripted backend plays the
model, a mock environment plays the tools. This walk-through replays the
first one and looks at how the configuration moves from stage to stage.
"""

from toolself import Orchestrator, load_scenario, scenario_names

print("packaged scenarios:", scenario_names())

scenario = load_scenario("case1_nasa")
print(scenario.task[:120], "...")

# strict=True makes every scripted completion check that its prompt contains
# the expected text, so a replay also verifies what the agent was shown
inference, engine = scenario.backends(strict=True)
orch = Orchestrator(inference, scenario.registry(), engine_backend=engine)
traj = orch.run_task(scenario.task)

print("status:", traj.status, "| final:", traj.final_result, "| expected:", scenario.expected_final)

# one line per stage: goal, tool count, steps taken and how the stage ended
for stage in traj.stages:
    c = stage.config
    t = stage.trace.terminal
    print(f"stage {c.stage_index + 1}: {len(c.toolbox)} tools, {len(stage.trace.steps)} steps, ended {t.kind}")
    print("   goal:", c.sub_goal[:90])

# toolbox changes are what the engine is for
for prev, cur in zip(traj.stages, traj.stages[1:]):
    added = set(cur.config.toolbox) - set(prev.config.toolbox)
    if added:
        print(f"stage {cur.config.stage_index + 1} adds {sorted(added)}")

# the global history is what later stages see as knowledge
print(traj.stages[-1].config.knowledge[:300])

print(traj.metrics)
