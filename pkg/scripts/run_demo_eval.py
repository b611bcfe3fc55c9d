#!/usr/bin/env python3
"""Run the bundled 6-encounter demo dataset through one pipeline with the
deterministic heuristic backend and print the report.

Usage:
    python scripts/run_demo_eval.py
    python scripts/run_demo_eval.py --pipeline note_to_vignette_to_esi --parallelism 8
"""
from __future__ import annotations

import argparse
import tempfile
from importlib import resources
from pathlib import Path

from esitriage.harness import parse_run_config, run_eval
from esitriage.metrics import render_report
from esitriage.pipelines import PipelineKind


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--pipeline", default="note_to_esi", choices=[k.value for k in PipelineKind])
    parser.add_argument("--ablation", default="none", choices=["none", "drop_vitals", "drop_exam"])
    parser.add_argument("--parallelism", type=int, default=4)
    parser.add_argument("--out", help="artifact directory (default: a fresh temp dir)")
    args = parser.parse_args()

    dataset = str(resources.files("esitriage.data").joinpath("demo_encounters.jsonl"))
    out_dir = args.out or tempfile.mkdtemp(prefix="esitriage-demo-")
    raw = {
        "version": 1,
        "dataset": {"path": dataset, "format": "jsonl"},
        "pipeline": args.pipeline,
        "ablation": args.ablation,
        "backend": {"kind": "heuristic"},
        "parallelism": args.parallelism,
        "output_dir": out_dir,
    }
    artifact = run_eval(parse_run_config(raw, base_dir=Path.cwd()))
    print(f"artifact: {artifact.directory}")
    print(f"digest:   {artifact.predictions_digest}")
    print(render_report(artifact.report))


if __name__ == "__main__":
    main()
