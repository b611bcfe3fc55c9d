"""Batch evaluation: run one configuration over a dataset with bounded
parallelism, persist predictions as JSONL, compute the report, and compare
runs.

A run configuration is a single JSON file with a ``version`` field; unknown
keys are errors, because a silently ignored key corrupts comparisons.
Predictions are written in input order regardless of completion order, and
the content digest excludes latency fields so goldens stay stable while
wall-clock varies.  With scripted or heuristic backends the predictions
file itself is byte-identical across runs.
"""
from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .backend import (
    BackendError,
    BackendSpec,
    BackendSpecError,
    HeuristicSpec,
    build_backend,
    parse_backend_spec,
)
from .ensemble import EnsembleOptions
from .ingest import (
    CurationRules,
    LabelError,
    SchemaError,
    curate,
    load_encounters,
    write_exclusion_report,
)
from .metrics import EvalReport, RunMeta, compute_metrics, report_from_dict, report_to_dict
from .pipelines import (
    Ablation,
    EmptyVignetteError,
    PipelineInputError,
    PipelineKind,
    PredictionRecord,
    StageError,
    VIGNETTE_PIPELINES,
    record_from_dict,
    record_to_dict,
    run_pipeline,
)
from .prompts import default_prompt_pack, load_prompt_pack
from .rag import RagOptions, index_corpus, load_corpus

CONFIG_VERSION = 1

PREDICTIONS_FILE = "predictions.jsonl"
REPORT_FILE = "report.json"
EXCLUSIONS_FILE = "exclusions.jsonl"


class ConfigError(ValueError):
    pass


class DatasetError(RuntimeError):
    pass


class MismatchedDatasetsError(ValueError):
    pass


class HarnessBackendError(RuntimeError):
    """A fatal backend failure; a partial artifact was written."""

    def __init__(self, message: str, artifact_dir: Path):
        super().__init__(message)
        self.artifact_dir = artifact_dir


@dataclass(frozen=True)
class EnsembleConfig:
    n_agents: int = 3
    rounds: int = 1


@dataclass(frozen=True)
class RagConfig:
    corpus_path: str
    k: int = 3


@dataclass(frozen=True)
class RunConfig:
    dataset_path: str
    dataset_format: str = "jsonl"
    curation_enabled: bool = False
    curation_rules: CurationRules = field(default_factory=CurationRules)
    pipeline: PipelineKind = PipelineKind.NOTE_TO_ESI
    ablation: Ablation = Ablation.NONE
    backend: BackendSpec = field(default_factory=HeuristicSpec)
    ensemble: EnsembleConfig | None = None
    rag: RagConfig | None = None
    parallelism: int = 1
    output_dir: str = "runs/out"
    prompt_pack_path: str | None = None
    seed: int = 0

    @property
    def strategy(self) -> str:
        if self.ensemble is not None:
            return "ensemble"
        if self.rag is not None:
            return "rag"
        return "plain"


def _require_keys(raw: dict, allowed: set[str], where: str) -> None:
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


def parse_run_config(raw: dict, base_dir: Path | None = None) -> RunConfig:
    """Parse and validate a config object; all referenced files must exist."""
    base = base_dir or Path.cwd()
    _require_keys(
        raw,
        {
            "version",
            "dataset",
            "curation",
            "pipeline",
            "ablation",
            "backend",
            "ensemble",
            "rag",
            "parallelism",
            "output_dir",
            "prompt_pack",
            "seed",
        },
        "config",
    )
    if raw.get("version") != CONFIG_VERSION:
        raise ConfigError(f"config version must be {CONFIG_VERSION}, got {raw.get('version')!r}")

    dataset = raw.get("dataset")
    if not isinstance(dataset, dict):
        raise ConfigError("config: 'dataset' object is required")
    _require_keys(dataset, {"path", "format"}, "config.dataset")
    dataset_path = dataset.get("path")
    if not isinstance(dataset_path, str) or not dataset_path:
        raise ConfigError("config.dataset: 'path' is required")
    dataset_format = dataset.get("format", "jsonl")
    if dataset_format not in ("jsonl", "csv"):
        raise ConfigError(f"config.dataset: unknown format {dataset_format!r}")
    resolved_dataset = str((base / dataset_path).resolve())
    if not Path(resolved_dataset).exists():
        raise ConfigError(f"config.dataset: file not found: {dataset_path}")

    curation_enabled = False
    rules = CurationRules()
    if raw.get("curation") is not None:
        cur = raw["curation"]
        _require_keys(
            cur,
            {"enabled", "placeholder_phrases", "require_vitals", "require_exam", "exclude_pmh_none"},
            "config.curation",
        )
        curation_enabled = bool(cur.get("enabled", False))
        rules = CurationRules(
            placeholder_phrases=frozenset(
                p.lower() for p in cur.get("placeholder_phrases", sorted(CurationRules().placeholder_phrases))
            ),
            require_vitals=bool(cur.get("require_vitals", True)),
            require_exam=bool(cur.get("require_exam", True)),
            exclude_pmh_none=bool(cur.get("exclude_pmh_none", True)),
        )

    try:
        pipeline = PipelineKind(raw.get("pipeline", PipelineKind.NOTE_TO_ESI.value))
    except ValueError:
        raise ConfigError(f"config: unknown pipeline {raw.get('pipeline')!r}")
    try:
        ablation = Ablation(raw.get("ablation", Ablation.NONE.value))
    except ValueError:
        raise ConfigError(f"config: unknown ablation {raw.get('ablation')!r}")

    backend_raw = raw.get("backend")
    if not isinstance(backend_raw, dict):
        raise ConfigError("config: 'backend' object is required")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("config: 'seed' must be an integer")
    if backend_raw.get("kind") == "heuristic" and "seed" not in backend_raw:
        backend_raw = {**backend_raw, "seed": seed}
    try:
        backend = parse_backend_spec(backend_raw)
    except BackendSpecError as exc:
        raise ConfigError(f"config.backend: {exc}")
    if hasattr(backend, "fixture_path"):
        resolved = (base / backend.fixture_path).resolve()
        if not resolved.exists():
            raise ConfigError(f"config.backend: fixture not found: {backend.fixture_path}")
        backend = type(backend)(fixture_path=str(resolved))

    ensemble = None
    if raw.get("ensemble") is not None:
        ens = raw["ensemble"]
        _require_keys(ens, {"n_agents", "rounds"}, "config.ensemble")
        ensemble = EnsembleConfig(n_agents=ens.get("n_agents", 3), rounds=ens.get("rounds", 1))
        if ensemble.n_agents not in (3, 4):
            raise ConfigError("config.ensemble: n_agents must be 3 or 4")
        if ensemble.rounds not in (1, 2):
            raise ConfigError("config.ensemble: rounds must be 1 or 2")
        if pipeline not in VIGNETTE_PIPELINES:
            raise ConfigError(
                f"config: ensemble strategy requires a vignette pipeline, not {pipeline.value}"
            )

    rag = None
    if raw.get("rag") is not None:
        rag_raw = raw["rag"]
        _require_keys(rag_raw, {"corpus_path", "k"}, "config.rag")
        corpus_path = rag_raw.get("corpus_path")
        if not isinstance(corpus_path, str) or not corpus_path:
            raise ConfigError("config.rag: 'corpus_path' is required")
        resolved_corpus = (base / corpus_path).resolve()
        if not resolved_corpus.exists():
            raise ConfigError(f"config.rag: corpus not found: {corpus_path}")
        k = rag_raw.get("k", 3)
        if not isinstance(k, int) or k < 1:
            raise ConfigError("config.rag: k must be a positive integer")
        rag = RagConfig(corpus_path=str(resolved_corpus), k=k)

    if ensemble is not None and rag is not None:
        raise ConfigError("config: ensemble and rag strategies are mutually exclusive")

    parallelism = raw.get("parallelism", 1)
    if not isinstance(parallelism, int) or parallelism < 1:
        raise ConfigError("config: parallelism must be a positive integer")

    output_dir = raw.get("output_dir", "runs/out")
    if not isinstance(output_dir, str) or not output_dir:
        raise ConfigError("config: output_dir must be a non-empty string")

    prompt_pack_path = raw.get("prompt_pack")
    if prompt_pack_path is not None:
        resolved_pack = (base / prompt_pack_path).resolve()
        if not resolved_pack.exists():
            raise ConfigError(f"config: prompt pack not found: {prompt_pack_path}")
        prompt_pack_path = str(resolved_pack)

    return RunConfig(
        dataset_path=resolved_dataset,
        dataset_format=dataset_format,
        curation_enabled=curation_enabled,
        curation_rules=rules,
        pipeline=pipeline,
        ablation=ablation,
        backend=backend,
        ensemble=ensemble,
        rag=rag,
        parallelism=parallelism,
        output_dir=str((base / output_dir).resolve()),
        prompt_pack_path=prompt_pack_path,
        seed=seed,
    )


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}")
    return parse_run_config(raw, base_dir=path.parent)


def config_snapshot(config: RunConfig) -> dict:
    """The config as persisted inside the artifact (self-description)."""
    backend: dict = {"kind": type(config.backend).__name__.replace("Spec", "").lower()}
    for key, value in vars(config.backend).items():
        backend[key] = value
    return {
        "version": CONFIG_VERSION,
        "dataset": {"path": config.dataset_path, "format": config.dataset_format},
        "curation": {
            "enabled": config.curation_enabled,
            "placeholder_phrases": sorted(config.curation_rules.placeholder_phrases),
            "require_vitals": config.curation_rules.require_vitals,
            "require_exam": config.curation_rules.require_exam,
            "exclude_pmh_none": config.curation_rules.exclude_pmh_none,
        },
        "pipeline": config.pipeline.value,
        "ablation": config.ablation.value,
        "backend": backend,
        "ensemble": (
            {"n_agents": config.ensemble.n_agents, "rounds": config.ensemble.rounds}
            if config.ensemble
            else None
        ),
        "rag": ({"corpus_path": config.rag.corpus_path, "k": config.rag.k} if config.rag else None),
        "parallelism": config.parallelism,
        "output_dir": config.output_dir,
        "prompt_pack": config.prompt_pack_path,
        "seed": config.seed,
    }


@dataclass(frozen=True)
class RunArtifact:
    directory: Path
    predictions_path: Path
    report: EvalReport
    config: dict
    predictions_digest: str
    partial: bool = False


def _record_line(record: PredictionRecord) -> str:
    return json.dumps(record_to_dict(record), ensure_ascii=False)


def predictions_digest(records: list[PredictionRecord]) -> str:
    """SHA-256 over the serialized records with latency fields removed."""
    hasher = hashlib.sha256()
    for record in records:
        stripped = record_to_dict(record)
        stripped.pop("latency_seconds", None)
        hasher.update(json.dumps(stripped, ensure_ascii=False).encode("utf-8"))
        hasher.update(b"\n")
    return hasher.hexdigest()


def run_eval(config: RunConfig) -> RunArtifact:
    """Execute one run end to end; see the module docstring for the
    determinism and ordering guarantees."""
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    predictions_path = out_dir / PREDICTIONS_FILE
    if predictions_path.exists():
        raise ConfigError(f"output dir already contains {PREDICTIONS_FILE}: {out_dir}")

    try:
        encounters = load_encounters(config.dataset_path, config.dataset_format)
    except (SchemaError, LabelError, FileNotFoundError) as exc:
        raise DatasetError(str(exc)) from exc

    if config.curation_enabled:
        curated = curate(encounters, config.curation_rules)
        write_exclusion_report(curated, out_dir / EXCLUSIONS_FILE)
        encounters = list(curated.retained)

    backend = build_backend(config.backend)
    pack = (
        load_prompt_pack(config.prompt_pack_path) if config.prompt_pack_path else default_prompt_pack()
    )
    rag_options = None
    if config.rag is not None:
        rag_options = RagOptions(index=index_corpus(load_corpus(config.rag.corpus_path)), k=config.rag.k)
    ensemble_options = None
    if config.ensemble is not None:
        ensemble_options = EnsembleOptions(
            n_agents=config.ensemble.n_agents, rounds=config.ensemble.rounds
        )

    def predict_one(encounter):
        return run_pipeline(
            config.pipeline,
            encounter,
            backend,
            pack,
            ablation=config.ablation,
            rag=rag_options,
            ensemble=ensemble_options,
        )

    records: list[PredictionRecord] = []
    failure: Exception | None = None
    with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
        futures = [pool.submit(predict_one, enc) for enc in encounters]
        for future in futures:
            if failure is not None:
                future.cancel()
                continue
            try:
                records.append(future.result())
            except (BackendError, StageError, EmptyVignetteError) as exc:
                failure = exc
            except PipelineInputError as exc:
                failure = DatasetError(str(exc))

    partial = failure is not None
    with predictions_path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(_record_line(record) + "\n")

    digest = predictions_digest(records)
    meta = RunMeta(
        pipeline=config.pipeline.value,
        backend_id=backend.backend_id,
        ablation=config.ablation.value,
        prompt_pack_version=pack.version,
        strategy=config.strategy,
    )
    report = compute_metrics(records, meta=meta)
    snapshot = config_snapshot(config)
    report_payload = {
        "report": report_to_dict(report),
        "config": snapshot,
        "predictions_digest": digest,
        "partial": partial,
    }
    (out_dir / REPORT_FILE).write_text(
        json.dumps(report_payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )

    artifact = RunArtifact(
        directory=out_dir,
        predictions_path=predictions_path,
        report=report,
        config=snapshot,
        predictions_digest=digest,
        partial=partial,
    )
    if isinstance(failure, DatasetError):
        raise failure
    if failure is not None:
        raise HarnessBackendError(f"run aborted: {failure}", out_dir) from failure
    return artifact


def load_artifact(directory: str | Path) -> RunArtifact:
    directory = Path(directory)
    report_path = directory / REPORT_FILE
    predictions_path = directory / PREDICTIONS_FILE
    if not report_path.exists() or not predictions_path.exists():
        raise DatasetError(f"not a run artifact (missing {REPORT_FILE} or {PREDICTIONS_FILE}): {directory}")
    payload = json.loads(report_path.read_text(encoding="utf-8"))
    return RunArtifact(
        directory=directory,
        predictions_path=predictions_path,
        report=report_from_dict(payload["report"]),
        config=payload["config"],
        predictions_digest=payload["predictions_digest"],
        partial=payload.get("partial", False),
    )


def load_predictions(artifact: RunArtifact) -> list[PredictionRecord]:
    records = []
    with artifact.predictions_path.open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(record_from_dict(json.loads(line)))
    return records


@dataclass(frozen=True)
class PredictionChange:
    encounter_id: str
    a: int | None
    b: int | None


@dataclass(frozen=True)
class RunDiff:
    metric_deltas: dict[str, float]
    count_deltas: dict[str, int]
    changed: tuple[PredictionChange, ...]
    latency_delta: float

    def to_dict(self) -> dict:
        return {
            "metric_deltas": self.metric_deltas,
            "count_deltas": self.count_deltas,
            "changed_encounters": [
                {"encounter_id": c.encounter_id, "a": c.a, "b": c.b} for c in self.changed
            ],
            "latency_delta": self.latency_delta,
        }

    def render_text(self) -> str:
        lines = ["metric deltas (b - a):"]
        for name, delta in self.metric_deltas.items():
            lines.append(f"  {name}: {delta * 100:+.2f} pp")
        lines.append(f"  mean latency: {self.latency_delta:+.3f} s")
        lines.append(f"changed encounters: {len(self.changed)}")
        for change in self.changed:
            lines.append(f"  {change.encounter_id}: {change.a} -> {change.b}")
        return "\n".join(lines)


_METRIC_NAMES = (
    "discordance",
    "undertriage",
    "overtriage",
    "significant_undertriage",
    "significant_overtriage",
)


def compare_runs(a: RunArtifact, b: RunArtifact) -> RunDiff:
    """Per-metric deltas (b - a) plus per-encounter prediction changes;
    the two runs must cover the same encounter ids."""
    records_a = load_predictions(a)
    records_b = load_predictions(b)
    ids_a = {r.encounter_id for r in records_a}
    ids_b = {r.encounter_id for r in records_b}
    if ids_a != ids_b:
        only_a = sorted(ids_a - ids_b)[:5]
        only_b = sorted(ids_b - ids_a)[:5]
        raise MismatchedDatasetsError(
            f"encounter id sets differ (only in a: {only_a}, only in b: {only_b})"
        )
    metric_deltas = {}
    count_deltas = {}
    for name in _METRIC_NAMES:
        va = getattr(a.report, name)
        vb = getattr(b.report, name)
        metric_deltas[name] = vb.rate - va.rate
        count_deltas[name] = vb.count - va.count
    by_id_b = {r.encounter_id: r for r in records_b}
    changed = []
    for record_a in records_a:
        record_b = by_id_b[record_a.encounter_id]
        pa = record_a.predicted.value if record_a.predicted else None
        pb = record_b.predicted.value if record_b.predicted else None
        if pa != pb:
            changed.append(PredictionChange(encounter_id=record_a.encounter_id, a=pa, b=pb))
    return RunDiff(
        metric_deltas=metric_deltas,
        count_deltas=count_deltas,
        changed=tuple(changed),
        latency_delta=b.report.mean_latency_seconds - a.report.mean_latency_seconds,
    )
