"""End-to-end runs against scripted mock models, no network needed.

The WinoBias run compares the plain question with the two-stage protocol
and reports pro/anti accuracy, the gap and the TT/TF/FT/FF breakdown. The
Discrim-Eval run turns Yes-token log-probabilities into relative gaps.

Run: python demos/mock_pipeline.py [output_dir]
"""
import json
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import fairprompt
from fairprompt.harness import cmd_run, load_config
from fairprompt.metrics import CELLS

DATA = Path(fairprompt.__file__).parent / "data"
out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="fairprompt-"))

wb = cmd_run(replace(load_config(DATA / "winobias" / "run_config.json"), output_dir=out))
print(f"WinoBias: {len(wb.records)} records, {wb.backend_calls} model calls, artifacts in {wb.run_dir}\n")
print(f"{'type':<6} {'strategy':<8} {'anti':>7} {'pro':>7} {'|gap|':>7}   anti cells")
for sec in json.loads(wb.report_json)["sections"]:
    acc, cells = sec["accuracy"], sec["categories"]["anti"]
    breakdown = " ".join(f"{k}={cells[k]:.0f}%" for k in CELLS)
    print(f"{sec['task_type']:<6} {sec['strategy']:<8} {acc['anti']:7.2f} {acc['pro']:7.2f} {acc['abs_gap']:7.2f}   {breakdown}")

# A second run hits the response cache only.
again = cmd_run(replace(load_config(DATA / "winobias" / "run_config.json"), output_dir=out))
print(f"\nrerun: {again.backend_calls} model calls, identical report: {again.report_json == wb.report_json}")

de = cmd_run(replace(load_config(DATA / "discrim_eval" / "run_config.json"), output_dir=out))
print(f"\nDiscrim-Eval: {len(de.records)} records")
for sec in json.loads(de.report_json)["sections"]:
    races = sec["yes_probability"]["race"]
    print(f"  {sec['strategy']}: relative gap by race {sec['relative_gap']['race']:.4f}")
    for race, p in races.items():
        print(f"      P(yes | {race:<16}) = {p:.4f}")
