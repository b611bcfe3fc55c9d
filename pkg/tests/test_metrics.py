from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, strategies as st

from esitriage.domain import EsiLevel
from esitriage.metrics import (
    EvalReport,
    MetricValue,
    RunMeta,
    ShapeMismatchError,
    aggregate_token_saliency,
    compute_metrics,
    render_report,
    render_report_row,
    report_from_dict,
    report_to_dict,
)
from esitriage.pipelines import Ablation, PipelineKind, PredictionRecord, SaliencyVector


def make_record(
    truth: int | None,
    pred: int | None,
    encounter_id: str = "e",
    latency: float = 0.0,
    saliency: SaliencyVector | None = None,
) -> PredictionRecord:
    return PredictionRecord(
        encounter_id=encounter_id,
        pipeline=PipelineKind.NOTE_TO_ESI,
        ablation=Ablation.NONE,
        predicted=EsiLevel(pred) if pred else None,
        parse_failed=pred is None,
        nurse_esi=EsiLevel(truth) if truth else None,
        structured=None,
        vignette=None,
        ensemble=None,
        retrieved=None,
        saliency=saliency,
        raw_model_text="",
        latency_seconds=latency,
        backend_id="test",
    )


def records_for(truths: list[int], preds: list[int]) -> list[PredictionRecord]:
    return [make_record(t, p, encounter_id=f"e{i}") for i, (t, p) in enumerate(zip(truths, preds))]


def oracle_counts(truths: list[int], preds: list[int]) -> dict[str, int]:
    """Independent enumerator: literally count each error definition."""
    return {
        "disc": sum(1 for t, p in zip(truths, preds) if p != t),
        "under": sum(1 for t, p in zip(truths, preds) if p > t),
        "over": sum(1 for t, p in zip(truths, preds) if p < t),
        "sig_under": sum(1 for t, p in zip(truths, preds) if t == 2 and p in (3, 4, 5)),
        "sig_over": sum(1 for t, p in zip(truths, preds) if t in (3, 4, 5) and p in (1, 2)),
    }


# ---------------------------------------------------------------------------
# compute_metrics
# ---------------------------------------------------------------------------


def test_identity_predictions_are_all_zero():
    report = compute_metrics(records_for([1, 2, 3, 4, 5], [1, 2, 3, 4, 5]))
    assert report.n_scored == 5
    for name in ("discordance", "undertriage", "overtriage",
                 "significant_undertriage", "significant_overtriage"):
        assert getattr(report, name) == MetricValue(0, 0.0)


def test_hand_enumerated_mixed_vector():
    # hand application: (2,3) under+sig_under, (3,2) over+sig_over, (4,4) ok
    report = compute_metrics(records_for([2, 3, 4], [3, 2, 4]))
    assert report.discordance == MetricValue(2, 2 / 3)
    assert report.undertriage == MetricValue(1, 1 / 3)
    assert report.overtriage == MetricValue(1, 1 / 3)
    assert report.significant_undertriage == MetricValue(1, 1 / 3)
    assert report.significant_overtriage == MetricValue(1, 1 / 3)


def test_hand_enumerated_overtriage_vector():
    # (3,1) and (3,2) are both overtriage and both significant
    report = compute_metrics(records_for([3, 3], [1, 2]))
    assert report.discordance == MetricValue(2, 1.0)
    assert report.undertriage == MetricValue(0, 0.0)
    assert report.overtriage == MetricValue(2, 1.0)
    assert report.significant_undertriage == MetricValue(0, 0.0)
    assert report.significant_overtriage == MetricValue(2, 1.0)


def test_empty_input_is_defined():
    report = compute_metrics([])
    assert report.n_scored == 0 and report.n_failed == 0
    assert report.discordance.rate == 0.0
    assert report.mean_latency_seconds == 0.0


def test_parse_failures_excluded_from_denominator():
    records = records_for([2, 2], [2, 4]) + [make_record(3, None, encounter_id="fail")]
    report = compute_metrics(records)
    assert report.n_scored == 2 and report.n_failed == 1
    assert report.discordance == MetricValue(1, 0.5)
    assert report.failure_rate == pytest.approx(1 / 3)


def test_mean_latency_over_scored_records():
    records = [
        make_record(2, 2, encounter_id="a", latency=0.2),
        make_record(2, 3, encounter_id="b", latency=0.4),
        make_record(2, None, encounter_id="c", latency=9.9),
    ]
    assert compute_metrics(records).mean_latency_seconds == pytest.approx(0.3)


def test_unlabeled_record_rejected():
    with pytest.raises(ValueError, match="reference label"):
        compute_metrics([make_record(None, 3)])


@given(
    st.lists(
        st.tuples(st.integers(1, 5), st.integers(1, 5)), min_size=1, max_size=60
    )
)
def test_matches_oracle_and_partition(pairs):
    truths = [t for t, _ in pairs]
    preds = [p for _, p in pairs]
    report = compute_metrics(records_for(truths, preds))
    expected = oracle_counts(truths, preds)
    assert report.discordance.count == expected["disc"]
    assert report.undertriage.count == expected["under"]
    assert report.overtriage.count == expected["over"]
    assert report.significant_undertriage.count == expected["sig_under"]
    assert report.significant_overtriage.count == expected["sig_over"]
    # partition and subset invariants
    assert report.undertriage.count + report.overtriage.count == report.discordance.count
    assert report.significant_undertriage.count <= report.undertriage.count
    assert report.significant_overtriage.count <= report.overtriage.count


def test_appending_concordant_never_increases_rates():
    rng = random.Random(7)
    truths = [rng.randint(1, 5) for _ in range(30)]
    preds = [rng.randint(1, 5) for _ in range(30)]
    before = compute_metrics(records_for(truths, preds))
    after = compute_metrics(records_for(truths + [3], preds + [3]))
    for name in ("discordance", "undertriage", "overtriage",
                 "significant_undertriage", "significant_overtriage"):
        assert getattr(after, name).rate <= getattr(before, name).rate


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def _reference_report() -> EvalReport:
    # reference rates exercising all six columns at two-decimal precision
    return EvalReport(
        n_scored=10_000,
        n_failed=0,
        discordance=MetricValue(5170, 0.5170),
        undertriage=MetricValue(2074, 0.2074),
        overtriage=MetricValue(3097, 0.3097),
        significant_undertriage=MetricValue(1136, 0.1136),
        significant_overtriage=MetricValue(625, 0.0625),
        mean_latency_seconds=0.32,
        meta=RunMeta(pipeline="note_to_vignette_to_esi", backend_id="x"),
    )


def test_render_reference_row_exactly():
    assert render_report_row(_reference_report()) == "51.70% 20.74% 30.97% 11.36% 6.25% 0.32"


def test_render_zero_report():
    report = compute_metrics([])
    assert render_report_row(report) == "0.00% 0.00% 0.00% 0.00% 0.00% 0.00"


def test_text_table_has_header_and_row():
    text = render_report(_reference_report(), "text_table")
    lines = text.splitlines()
    assert lines[0].startswith("Discordance | Under | Over")
    assert lines[1] == "51.70% 20.74% 30.97% 11.36% 6.25% 0.32"


def test_markdown_table():
    md = render_report(_reference_report(), "markdown")
    assert md.splitlines()[0].startswith("| Discordance |")
    assert "| 51.70% |" in md


def test_json_round_trip():
    report = compute_metrics(records_for([2, 3, 4], [3, 2, 4]), meta=RunMeta(pipeline="note_to_esi"))
    again = report_from_dict(json.loads(render_report(report, "json")))
    assert again == report


def test_dict_round_trip_preserves_meta():
    meta = RunMeta(pipeline="p", backend_id="b", ablation="drop_exam",
                   prompt_pack_version="v1", strategy="rag")
    report = compute_metrics(records_for([2], [2]), meta=meta)
    assert report_from_dict(report_to_dict(report)).meta == meta


def test_unknown_format_rejected():
    with pytest.raises(ValueError):
        render_report(_reference_report(), "csv")


def test_rendering_injective_at_displayed_precision():
    # reports that differ at two-decimal resolution must render differently
    a = compute_metrics(records_for([2, 2, 2, 2], [2, 2, 2, 3]))  # 25.00% discordance
    b = compute_metrics(records_for([2, 2, 2, 2], [2, 2, 3, 3]))  # 50.00% discordance
    assert render_report_row(a) != render_report_row(b)


# ---------------------------------------------------------------------------
# saliency
# ---------------------------------------------------------------------------


def test_single_correct_record_top_token():
    record = make_record(2, 2, saliency=SaliencyVector(("a", "b"), (0.9, 0.1)))
    summary = aggregate_token_saliency([record])
    assert summary.correct[0].token == "a"
    assert summary.n_correct_records == 1 and summary.n_incorrect_records == 0


def test_shape_mismatch():
    record = make_record(2, 2, saliency=SaliencyVector(("a", "b"), (0.9,)))
    with pytest.raises(ShapeMismatchError):
        aggregate_token_saliency([record])


def test_mean_across_records():
    records = [
        make_record(2, 2, encounter_id="a", saliency=SaliencyVector(("fever",), (0.4,))),
        make_record(3, 3, encounter_id="b", saliency=SaliencyVector(("fever",), (0.6,))),
    ]
    summary = aggregate_token_saliency(records)
    assert summary.correct[0].mean_score == pytest.approx(0.5)
    assert summary.correct[0].n == 2


def test_groups_split_by_outcome_and_focus_filter():
    records = [
        make_record(2, 2, encounter_id="a", saliency=SaliencyVector(("hit",), (1.0,))),
        make_record(2, 4, encounter_id="b", saliency=SaliencyVector(("miss",), (1.0,))),
        make_record(5, 5, encounter_id="c", saliency=SaliencyVector(("outside",), (1.0,))),
    ]
    summary = aggregate_token_saliency(records, focus_truth={2, 3})
    assert [t.token for t in summary.correct] == ["hit"]
    assert [t.token for t in summary.incorrect] == ["miss"]


def test_records_without_saliency_skipped():
    summary = aggregate_token_saliency([make_record(2, 2)])
    assert summary.correct == () and summary.incorrect == ()
