#!/usr/bin/env python3
"""Evaluate every pipeline kind (and the missing-information ablations) over
a dataset and print one table row per configuration, mirroring the shape of
the model-comparison and ablation tables.

Defaults to the bundled demo dataset with the heuristic backend; point it at
a real dataset and an http backend to regenerate the same tables on served
checkpoints:

    python scripts/run_pipeline_matrix.py \\
        --dataset triage.jsonl \\
        --backend-url http://localhost:8000 --model my-finetuned-checkpoint
"""
from __future__ import annotations

import argparse
import tempfile
from importlib import resources
from pathlib import Path

from esitriage.harness import parse_run_config, run_eval
from esitriage.metrics import render_report_row
from esitriage.pipelines import Ablation, PipelineKind


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dataset", help="encounter JSONL (default: bundled demo)")
    parser.add_argument("--format", default="jsonl", choices=["jsonl", "csv"])
    parser.add_argument("--backend-url", help="chat-completion server base URL")
    parser.add_argument("--model", default="", help="model name for the http backend")
    parser.add_argument("--parallelism", type=int, default=4)
    parser.add_argument("--ablations", action="store_true", help="also run drop_vitals / drop_exam")
    args = parser.parse_args()

    dataset = args.dataset or str(resources.files("esitriage.data").joinpath("demo_encounters.jsonl"))
    if args.backend_url:
        backend = {"kind": "http", "base_url": args.backend_url, "model": args.model or "default"}
    else:
        backend = {"kind": "heuristic"}

    ablations = list(Ablation) if args.ablations else [Ablation.NONE]
    work_dir = Path(tempfile.mkdtemp(prefix="esitriage-matrix-"))

    header = f"{'pipeline':40s} {'ablation':12s} Discordance Under Over Sig.U Sig.O Time"
    print(header)
    for kind in PipelineKind:
        for ablation in ablations:
            raw = {
                "version": 1,
                "dataset": {"path": dataset, "format": args.format},
                "pipeline": kind.value,
                "ablation": ablation.value,
                "backend": backend,
                "parallelism": args.parallelism,
                "output_dir": str(work_dir / f"{kind.value}-{ablation.value}"),
            }
            artifact = run_eval(parse_run_config(raw, base_dir=Path.cwd()))
            print(f"{kind.value:40s} {ablation.value:12s} {render_report_row(artifact.report)}")
    print(f"\nartifacts under {work_dir}")


if __name__ == "__main__":
    main()
