"""
From trajectories to training data
==================================

Runs are stored as versioned JSONL. An external judge labels each run, and
the label is copied onto every stage transcript and every configuration the
run produced. Successful runs alone make the fine-tuning set; both labels go
into the preference set.
"""

import json
import tempfile
from pathlib import Path

from toolself import KtoParams, Orchestrator, load_scenario, kto_loss
from toolself.ledger import assign_labels, export_datasets, read_jsonl, tool_usage_stats, write_jsonl

workdir = Path(tempfile.mkdtemp())

runs = []
for name in ("case1_nasa", "case2_asean"):
    s = load_scenario(name)
    inference, engine = s.backends()
    runs.append(Orchestrator(inference, s.registry(), engine_backend=engine).run_task(s.task))

log = workdir / "runs.jsonl"
write_jsonl(log, runs)
print(log.read_text()[:200], "...")

# pretend the judge accepted the first run and rejected the second
stored = read_jsonl(log)
labelled = [stored[0].with_label(1), stored[1].with_label(0)]

samples = assign_labels(labelled[0])
print(len(samples), "samples from a", len(labelled[0].stages), "stage run:",
      sorted({s.module for s in samples}))

for fmt in ("sft", "kto"):
    for module, (path, n) in export_datasets(labelled, fmt, workdir / "ds").items():
        print(f"{fmt} {module}: {n} records -> {path.name}")

first = json.loads((workdir / "ds" / "kto_reconfiguration.jsonl").read_text().splitlines()[0])
print(first["target"])

# the loss is small when the policy/reference ratio sits on the preferred side
p = KtoParams(beta=0.1, z0=0.0)
for r in (-20, -5, 0, 5, 20):
    print(f"r={r:4d}  desirable={kto_loss(r, 1, p):.4f}  undesirable={kto_loss(r, 0, p):.4f}")

# which tools the engine actually handed out
for tool, row in tool_usage_stats(stored).items():
    print(f"{tool:20s} selected in {row['trajectory_frequency']:.0%} of runs, {row['step_frequency']:.0%} of calls")
