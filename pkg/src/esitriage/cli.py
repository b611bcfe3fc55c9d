"""Command-line interface for the batch evaluation harness.

Verbs: validate, run, report, compare, curate, chunk, silver-tasks.
Exit codes: 0 success, 2 config error, 3 data error, 4 backend error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .backend import BackendError
from .harness import (
    ConfigError,
    DatasetError,
    HarnessBackendError,
    MismatchedDatasetsError,
    compare_runs,
    load_artifact,
    load_run_config,
    run_eval,
)
from .ingest import (
    CurationRules,
    InvalidKError,
    LabelError,
    SchemaError,
    build_silver_tasks,
    curate,
    load_encounters,
    partition_chunks,
    write_exclusion_report,
)
from .metrics import render_report
from .pipelines import StageError
from .prompts import PromptPackError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_BACKEND = 4


def _cmd_validate(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    print(f"ok: {args.config}")
    print(f"  pipeline={config.pipeline.value} strategy={config.strategy} "
          f"ablation={config.ablation.value} parallelism={config.parallelism}")
    return EXIT_OK


def _cmd_run(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    if args.output_dir:
        from dataclasses import replace

        config = replace(config, output_dir=str(Path(args.output_dir).resolve()))
    artifact = run_eval(config)
    print(f"artifact: {artifact.directory}")
    print(f"predictions digest: {artifact.predictions_digest}")
    print(render_report(artifact.report))
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    artifact = load_artifact(args.artifact)
    print(render_report(artifact.report, format=args.format))
    return EXIT_OK


def _cmd_compare(args: argparse.Namespace) -> int:
    diff = compare_runs(load_artifact(args.a), load_artifact(args.b))
    if args.json:
        print(json.dumps(diff.to_dict(), indent=2))
    else:
        print(diff.render_text())
    return EXIT_OK


def _load_rules(path: str | None) -> CurationRules:
    if path is None:
        return CurationRules()
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    allowed = {"placeholder_phrases", "require_vitals", "require_exam", "exclude_pmh_none"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown rule keys {sorted(unknown)}")
    defaults = CurationRules()
    return CurationRules(
        placeholder_phrases=frozenset(
            p.lower() for p in raw.get("placeholder_phrases", sorted(defaults.placeholder_phrases))
        ),
        require_vitals=raw.get("require_vitals", True),
        require_exam=raw.get("require_exam", True),
        exclude_pmh_none=raw.get("exclude_pmh_none", True),
    )


def _cmd_curate(args: argparse.Namespace) -> int:
    encounters = load_encounters(args.dataset, args.format)
    curated = curate(encounters, _load_rules(args.rules))
    print(f"loaded {len(encounters)}, retained {len(curated.retained)}, "
          f"excluded {len(curated.excluded)}")
    reasons: dict[str, int] = {}
    for exc in curated.excluded:
        reasons[exc.reason] = reasons.get(exc.reason, 0) + 1
    for reason in sorted(reasons):
        print(f"  {reason}: {reasons[reason]}")
    if args.report:
        write_exclusion_report(curated, args.report)
        print(f"exclusion report: {args.report}")
    return EXIT_OK


def _cmd_chunk(args: argparse.Namespace) -> int:
    encounters = load_encounters(args.dataset, args.format)
    chunks = partition_chunks(encounters, args.k)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, chunk in enumerate(chunks, start=1):
        path = out_dir / f"chunk-{i:02d}.jsonl"
        with path.open("w", encoding="utf-8") as fh:
            for enc in chunk:
                fh.write(
                    json.dumps(
                        {
                            "id": enc.id,
                            "age_months": enc.age_months,
                            "chief_complaint": enc.chief_complaint,
                            "vital_signs": enc.vital_signs,
                            "physical_exam": enc.physical_exam,
                            "pivot_assessment": enc.pivot_assessment,
                            "pmh": enc.pmh,
                            "triage_note": enc.triage_note,
                            "nurse_esi": enc.nurse_esi.value if enc.nurse_esi else None,
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )
    sizes = [len(c) for c in chunks]
    print(f"wrote {len(chunks)} chunks to {out_dir} (sizes {sizes})")
    return EXIT_OK


def _cmd_silver_tasks(args: argparse.Namespace) -> int:
    encounters = load_encounters(args.dataset, args.format)
    tasks = build_silver_tasks(encounters)
    out = Path(args.out)
    with out.open("w", encoding="utf-8") as fh:
        for task in tasks:
            fh.write(
                json.dumps(
                    {
                        "encounter_id": task.encounter_id,
                        "chief_complaint": task.prompt_context.chief_complaint,
                        "vital_signs": task.prompt_context.vital_signs,
                        "physical_exam": task.prompt_context.physical_exam,
                        "label": task.label.value,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
    print(f"wrote {len(tasks)} silver tasks to {out} (from {len(encounters)} encounters)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="esitriage", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate a run config file")
    p.add_argument("config")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("run", help="run an evaluation and write the artifact")
    p.add_argument("config")
    p.add_argument("--output-dir", help="override the config's output directory")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("report", help="render the report from a run artifact")
    p.add_argument("artifact")
    p.add_argument("--format", choices=["text_table", "markdown", "json"], default="text_table")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("compare", help="diff two run artifacts")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("curate", help="apply curation filters to a dataset")
    p.add_argument("dataset")
    p.add_argument("--rules", help="JSON file overriding the default curation rules")
    p.add_argument("--format", choices=["jsonl", "csv"], default="jsonl")
    p.add_argument("--report", help="write the exclusion report JSONL here")
    p.set_defaults(func=_cmd_curate)

    p = sub.add_parser("chunk", help="partition a dataset into k equal chunks")
    p.add_argument("dataset")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--format", choices=["jsonl", "csv"], default="jsonl")
    p.add_argument("--out-dir", default="chunks")
    p.set_defaults(func=_cmd_chunk)

    p = sub.add_parser("silver-tasks", help="build silver vignette-generation tasks")
    p.add_argument("dataset")
    p.add_argument("--format", choices=["jsonl", "csv"], default="jsonl")
    p.add_argument("--out", default="silver_tasks.jsonl")
    p.set_defaults(func=_cmd_silver_tasks)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, PromptPackError, InvalidKError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, SchemaError, LabelError, MismatchedDatasetsError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (HarnessBackendError, BackendError, StageError) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
