from __future__ import annotations

import csv
import json

import pytest
from hypothesis import given, strategies as st

from esitriage.domain import EsiLevel
from esitriage.ingest import (
    CurationRules,
    InvalidKError,
    LabelError,
    SchemaError,
    build_silver_tasks,
    curate,
    load_encounters,
    partition_chunks,
)

from conftest import make_encounter


RECORDS = [
    {
        "id": f"r-{i}",
        "age_months": 12 * i,
        "chief_complaint": "Fever",
        "vital_signs": "T 38.5, HR 120",
        "physical_exam": "Flushed, otherwise well",
        "pivot_assessment": None,
        "pmh": "Healthy",
        "triage_note": f"note {i}",
        "nurse_esi": 3,
    }
    for i in range(1, 4)
]


def _write_jsonl(path, records):
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def test_load_jsonl_preserves_order(tmp_path):
    path = tmp_path / "data.jsonl"
    _write_jsonl(path, RECORDS)
    encounters = load_encounters(path, "jsonl")
    assert [e.id for e in encounters] == ["r-1", "r-2", "r-3"]
    assert encounters[0].nurse_esi == EsiLevel(3)


def test_load_missing_file():
    with pytest.raises(FileNotFoundError):
        load_encounters("/nonexistent/nowhere.jsonl", "jsonl")


def test_label_error_names_record(tmp_path):
    bad = dict(RECORDS[0], id="bad-7", nurse_esi=7)
    path = tmp_path / "data.jsonl"
    _write_jsonl(path, [RECORDS[0], bad])
    with pytest.raises(LabelError, match="bad-7"):
        load_encounters(path, "jsonl")


def test_schema_error_carries_line_number(tmp_path):
    missing = {k: v for k, v in RECORDS[0].items() if k != "triage_note"}
    path = tmp_path / "data.jsonl"
    _write_jsonl(path, [RECORDS[0], missing])
    with pytest.raises(SchemaError, match=":2"):
        load_encounters(path, "jsonl")


def test_invalid_json_line_reported(tmp_path):
    path = tmp_path / "data.jsonl"
    path.write_text('{"id": "a"\n', encoding="utf-8")
    with pytest.raises(SchemaError, match=":1"):
        load_encounters(path, "jsonl")


def test_csv_and_jsonl_load_identically(tmp_path):
    # round-trip equivalence: the same fixture in both encodings
    jsonl_path = tmp_path / "data.jsonl"
    _write_jsonl(jsonl_path, RECORDS)
    csv_path = tmp_path / "data.csv"
    columns = list(RECORDS[0].keys())
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for rec in RECORDS:
            writer.writerow({k: ("" if v is None else v) for k, v in rec.items()})
    assert load_encounters(jsonl_path, "jsonl") == load_encounters(csv_path, "csv")


def test_csv_missing_column(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("id,age_months\nx,1\n", encoding="utf-8")
    with pytest.raises(SchemaError, match="missing required columns"):
        load_encounters(path, "csv")


def test_duplicate_ids_rejected(tmp_path):
    path = tmp_path / "data.jsonl"
    _write_jsonl(path, [RECORDS[0], RECORDS[0]])
    with pytest.raises(SchemaError, match="duplicate record id"):
        load_encounters(path, "jsonl")


# ---------------------------------------------------------------------------
# curation
# ---------------------------------------------------------------------------


def test_placeholder_complaint_any_case_excluded():
    enc = make_encounter(chief_complaint="See Pivot")
    curated = curate([enc])
    assert curated.retained == ()
    assert curated.excluded[0].reason == "placeholder_complaint"


def test_pmh_none_excluded():
    enc = make_encounter(pmh="none")
    curated = curate([enc])
    assert curated.excluded[0].reason == "pmh_none"


def test_substantive_record_retained():
    curated = curate([make_encounter()])
    assert len(curated.retained) == 1 and curated.excluded == ()


def test_first_failing_reason_wins():
    # placeholder complaint is checked before pmh
    enc = make_encounter(chief_complaint="see triage", pmh="none")
    assert curate([enc]).excluded[0].reason == "placeholder_complaint"


def test_vitals_without_numbers_excluded():
    enc = make_encounter(vital_signs="refused, crying")
    assert curate([enc]).excluded[0].reason == "no_numeric_vitals"


def test_rules_can_be_relaxed():
    enc = make_encounter(vital_signs="refused, crying")
    rules = CurationRules(require_vitals=False)
    assert len(curate([enc], rules).retained) == 1


def test_curation_fixture_survivors(curation_fixture_path):
    # hand enumeration: cur-002 placeholder complaint (also pmh none, first
    # rule wins), cur-004 no numeric vitals, cur-006 empty exam, cur-008 pmh
    # none; the other eight records pass every predicate
    encounters = load_encounters(curation_fixture_path, "jsonl")
    assert len(encounters) == 12
    curated = curate(encounters)
    assert [e.id for e in curated.retained] == [
        "cur-001", "cur-003", "cur-005", "cur-007",
        "cur-009", "cur-010", "cur-011", "cur-012",
    ]
    assert {x.id: x.reason for x in curated.excluded} == {
        "cur-002": "placeholder_complaint",
        "cur-004": "no_numeric_vitals",
        "cur-006": "missing_exam",
        "cur-008": "pmh_none",
    }


@given(
    st.lists(
        st.builds(
            make_encounter,
            id=st.text(min_size=1, max_size=8),
            chief_complaint=st.sampled_from(["Fever", "see pivot", "none", "Cough"]),
            vital_signs=st.sampled_from(["T 38.1", "refused", ""]),
            physical_exam=st.sampled_from(["Well appearing", "", "see triage"]),
            pmh=st.sampled_from(["Healthy", "none", "None "]),
        ),
        max_size=30,
    )
)
def test_curate_partitions_input(encounters):
    curated = curate(encounters)
    assert len(curated.retained) + len(curated.excluded) == len(encounters)
    retained_ids = [e.id for e in curated.retained]
    excluded_ids = [x.id for x in curated.excluded]
    # every input lands in exactly one bucket, order preserved within each
    assert sorted(retained_ids + excluded_ids) == sorted(e.id for e in encounters)
    assert all(e in encounters for e in curated.retained)


# ---------------------------------------------------------------------------
# chunking
# ---------------------------------------------------------------------------


def test_chunks_exact_division():
    chunks = partition_chunks(list(range(20)), 10)
    assert [len(c) for c in chunks] == [2] * 10


def test_chunks_remainder_to_front():
    chunks = partition_chunks(list(range(23)), 10)
    assert [len(c) for c in chunks] == [3, 3, 3, 2, 2, 2, 2, 2, 2, 2]


def test_chunks_large_corpus_remainder():
    # 117,247 items in 10 chunks: seven of 11,725 and three of 11,724
    sizes = [len(c) for c in partition_chunks(range(117_247), 10)]
    assert sizes == [11_725] * 7 + [11_724] * 3
    assert sum(sizes) == 117_247


def test_invalid_k():
    with pytest.raises(InvalidKError):
        partition_chunks([1, 2], 0)


@given(st.integers(0, 400), st.integers(1, 12))
def test_chunk_properties(n, k):
    items = list(range(n))
    chunks = partition_chunks(items, k)
    assert len(chunks) == k
    sizes = [len(c) for c in chunks]
    assert max(sizes) - min(sizes) <= 1
    assert [x for chunk in chunks for x in chunk] == items


# ---------------------------------------------------------------------------
# silver tasks
# ---------------------------------------------------------------------------


def test_silver_task_carries_label():
    enc = make_encounter(nurse_esi=EsiLevel(3))
    tasks = build_silver_tasks([enc])
    assert len(tasks) == 1
    assert tasks[0].label == EsiLevel(3)
    assert tasks[0].encounter_id == enc.id
    assert tasks[0].prompt_context.vital_signs == enc.vital_signs


def test_silver_task_requires_vitals_and_exam():
    assert build_silver_tasks([make_encounter(vital_signs="")]) == []
    assert build_silver_tasks([make_encounter(physical_exam="  ")]) == []


def test_silver_tasks_empty_input():
    assert build_silver_tasks([]) == []


@given(
    st.lists(
        st.builds(
            make_encounter,
            nurse_esi=st.sampled_from([EsiLevel(v) for v in range(1, 6)]),
            vital_signs=st.sampled_from(["HR 120", ""]),
            physical_exam=st.sampled_from(["Well appearing", ""]),
        ),
        max_size=20,
    )
)
def test_silver_tasks_never_alter_labels(encounters):
    tasks = build_silver_tasks(encounters)
    expected = [e.nurse_esi for e in encounters if e.vital_signs and e.physical_exam]
    assert [t.label for t in tasks] == expected
