#!/usr/bin/env python3
# The whole pipeline in one call: run the seeded experiment from
# configs/golden.toml and read back the headline metrics. Rerunning writes
# byte-identical artifacts (timing.json aside).

import json
from pathlib import Path

from idxuq.evalkit.experiment import load_config, run_experiment

ROOT = Path(__file__).resolve().parent.parent
OUT = Path("runs/golden-demo")

config = load_config(ROOT / "configs" / "golden.toml")
print(f"running the seeded experiment into {OUT}/ (about half a minute)...")
result = run_experiment(config, OUT)

m = result.metrics
print(f"\ndataset: {len(result.samples)} samples, "
      f"train/test/eval = " + "/".join(f"{p:.0%}" for p in result.splits.proportions))
print(f"held out: templates {sorted(result.splits.held_out_templates)}, "
      f"columns {sorted(result.splits.held_out_columns)}")

print("\nunreliable-sample recall (higher is better):")
for name, recalls in sorted(m.unreliable_recall.items()):
    print(f"  {name:9s} train {recalls['train']:.3f} | eval {recalls['eval']:.3f}")

print("\nbenefit-estimation error percentiles on the held-out split:")
for name, pct in sorted(m.error_percentiles.items()):
    print(f"  {name:9s} p50 {pct['p50']:.3f} | p95 {pct['p95']:.3f} | p99 {pct['p99']:.3f}")

print("\ncost improvement per budget (% of total table bytes):")
for port, per_budget in m.improvement.items():
    row = " | ".join(f"{b}%: {v:5.1%}" for b, v in per_budget.items())
    print(f"  {port:13s} {row}")

print("\nmean improvement across budgets:")
for port, stats in m.improvement_summary.items():
    print(f"  {port:13s} {stats['mean']:.3f} (var {stats['var']:.4f})")

print(f"\nartifacts: {', '.join(sorted(p.name for p in OUT.iterdir()))}")
print(json.dumps({"timing_s": m.timing}, indent=2))
