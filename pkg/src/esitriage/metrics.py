"""The five triage-error rates, timing and failure accounting, report
rendering, and token-saliency aggregation for explainability display.

All five rates share the same denominator: the number of *scored*
predictions.  Outputs the model produced but that could not be parsed to a
level are excluded from scoring and reported as a separate failure rate,
which preserves the exact partition

    undertriage count + overtriage count = discordance count.

Each rate carries its raw integer numerator alongside the float so that
reports compare exactly against independent enumerations.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .domain import classify_error
from .pipelines import PredictionRecord

REPORT_SCHEMA_VERSION = "1"

_COLUMNS = ("Discordance", "Under", "Over", "Sig. Under", "Sig. Over", "Time (s/encounter)")


class ShapeMismatchError(ValueError):
    """Parallel token/score arrays disagree in length."""


@dataclass(frozen=True)
class MetricValue:
    count: int
    rate: float


@dataclass(frozen=True)
class RunMeta:
    pipeline: str = ""
    backend_id: str = ""
    ablation: str = "none"
    prompt_pack_version: str = ""
    strategy: str = "plain"


@dataclass(frozen=True)
class EvalReport:
    n_scored: int
    n_failed: int
    discordance: MetricValue
    undertriage: MetricValue
    overtriage: MetricValue
    significant_undertriage: MetricValue
    significant_overtriage: MetricValue
    mean_latency_seconds: float
    meta: RunMeta = field(default_factory=RunMeta)

    @property
    def failure_rate(self) -> float:
        total = self.n_scored + self.n_failed
        return self.n_failed / total if total else 0.0


def compute_metrics(records: Sequence[PredictionRecord], meta: RunMeta | None = None) -> EvalReport:
    """Count each error class over the scored records; an empty input yields
    an all-zero report with every rate defined as 0."""
    n_failed = 0
    counts = {"disc": 0, "under": 0, "over": 0, "sig_under": 0, "sig_over": 0}
    latencies = []
    scored = 0
    for record in records:
        if record.predicted is None:
            n_failed += 1
            continue
        if record.nurse_esi is None:
            raise ValueError(f"record {record.encounter_id!r} has no reference label to score against")
        scored += 1
        latencies.append(record.latency_seconds)
        err = classify_error(record.nurse_esi, record.predicted)
        counts["disc"] += not err.concordant
        counts["under"] += err.undertriage
        counts["over"] += err.overtriage
        counts["sig_under"] += err.significant_undertriage
        counts["sig_over"] += err.significant_overtriage

    def value(count: int) -> MetricValue:
        return MetricValue(count=count, rate=count / scored if scored else 0.0)

    if meta is None:
        first = next((r for r in records), None)
        meta = RunMeta(
            pipeline=first.pipeline.value if first else "",
            backend_id=first.backend_id if first else "",
            ablation=first.ablation.value if first else "none",
        )
    return EvalReport(
        n_scored=scored,
        n_failed=n_failed,
        discordance=value(counts["disc"]),
        undertriage=value(counts["under"]),
        overtriage=value(counts["over"]),
        significant_undertriage=value(counts["sig_under"]),
        significant_overtriage=value(counts["sig_over"]),
        mean_latency_seconds=sum(latencies) / len(latencies) if latencies else 0.0,
        meta=meta,
    )


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def render_report_row(report: EvalReport) -> str:
    """The single data row: five percentages at two decimals plus the mean
    seconds per encounter, space-separated."""
    return (
        f"{report.discordance.rate * 100:.2f}% "
        f"{report.undertriage.rate * 100:.2f}% "
        f"{report.overtriage.rate * 100:.2f}% "
        f"{report.significant_undertriage.rate * 100:.2f}% "
        f"{report.significant_overtriage.rate * 100:.2f}% "
        f"{report.mean_latency_seconds:.2f}"
    )


def render_report(report: EvalReport, format: str = "text_table") -> str:
    if format == "text_table":
        header = " | ".join(_COLUMNS)
        return f"{header}\n{render_report_row(report)}"
    if format == "markdown":
        cells = render_report_row(report).split(" ")
        return "\n".join(
            [
                "| " + " | ".join(_COLUMNS) + " |",
                "|" + " --- |" * len(_COLUMNS),
                "| " + " | ".join(cells) + " |",
            ]
        )
    if format == "json":
        return json.dumps(report_to_dict(report), indent=2)
    raise ValueError(f"unknown report format {format!r} (expected text_table, markdown, or json)")


def report_to_dict(report: EvalReport) -> dict:
    def metric(m: MetricValue) -> dict:
        return {"count": m.count, "rate": m.rate}

    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "n_scored": report.n_scored,
        "n_failed": report.n_failed,
        "failure_rate": report.failure_rate,
        "metrics": {
            "discordance": metric(report.discordance),
            "undertriage": metric(report.undertriage),
            "overtriage": metric(report.overtriage),
            "significant_undertriage": metric(report.significant_undertriage),
            "significant_overtriage": metric(report.significant_overtriage),
        },
        "mean_latency_seconds": report.mean_latency_seconds,
        "meta": {
            "pipeline": report.meta.pipeline,
            "backend_id": report.meta.backend_id,
            "ablation": report.meta.ablation,
            "prompt_pack_version": report.meta.prompt_pack_version,
            "strategy": report.meta.strategy,
        },
    }


def report_from_dict(raw: dict) -> EvalReport:
    def metric(m: dict) -> MetricValue:
        return MetricValue(count=m["count"], rate=m["rate"])

    metrics = raw["metrics"]
    meta = raw.get("meta", {})
    return EvalReport(
        n_scored=raw["n_scored"],
        n_failed=raw["n_failed"],
        discordance=metric(metrics["discordance"]),
        undertriage=metric(metrics["undertriage"]),
        overtriage=metric(metrics["overtriage"]),
        significant_undertriage=metric(metrics["significant_undertriage"]),
        significant_overtriage=metric(metrics["significant_overtriage"]),
        mean_latency_seconds=raw["mean_latency_seconds"],
        meta=RunMeta(
            pipeline=meta.get("pipeline", ""),
            backend_id=meta.get("backend_id", ""),
            ablation=meta.get("ablation", "none"),
            prompt_pack_version=meta.get("prompt_pack_version", ""),
            strategy=meta.get("strategy", "plain"),
        ),
    )


# ---------------------------------------------------------------------------
# Saliency aggregation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TokenScore:
    token: str
    mean_score: float
    n: int


@dataclass(frozen=True)
class SaliencySummary:
    correct: tuple[TokenScore, ...]
    incorrect: tuple[TokenScore, ...]
    n_correct_records: int
    n_incorrect_records: int


def aggregate_token_saliency(
    records: Iterable[PredictionRecord],
    k: int = 10,
    focus_truth: set[int] | None = None,
) -> SaliencySummary:
    """Mean backend-supplied token scores per outcome group (correct vs
    incorrect), optionally restricted to reference levels of interest
    (e.g. {2, 3}); top-k tokens per group by mean score."""
    sums: dict[bool, dict[str, float]] = {True: {}, False: {}}
    counts: dict[bool, dict[str, int]] = {True: {}, False: {}}
    n_records = {True: 0, False: 0}
    for record in records:
        if record.saliency is None or record.predicted is None or record.nurse_esi is None:
            continue
        if focus_truth is not None and record.nurse_esi.value not in focus_truth:
            continue
        tokens, scores = record.saliency.tokens, record.saliency.scores
        if len(tokens) != len(scores):
            raise ShapeMismatchError(
                f"record {record.encounter_id!r}: {len(tokens)} tokens vs {len(scores)} scores"
            )
        group = record.predicted == record.nurse_esi
        n_records[group] += 1
        for token, score in zip(tokens, scores):
            sums[group][token] = sums[group].get(token, 0.0) + score
            counts[group][token] = counts[group].get(token, 0) + 1

    def top(group: bool) -> tuple[TokenScore, ...]:
        means = [
            TokenScore(token=t, mean_score=sums[group][t] / counts[group][t], n=counts[group][t])
            for t in sums[group]
        ]
        means.sort(key=lambda ts: (-ts.mean_score, ts.token))
        return tuple(means[:k])

    return SaliencySummary(
        correct=top(True),
        incorrect=top(False),
        n_correct_records=n_records[True],
        n_incorrect_records=n_records[False],
    )
