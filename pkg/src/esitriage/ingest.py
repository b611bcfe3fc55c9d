"""Dataset loading, curation filters, chunk partitioning, and silver-task
construction.

Encounter files are JSONL (one object per line, unknown fields ignored) or
CSV with the fixed column set ``id, age_months, chief_complaint,
vital_signs, physical_exam, pivot_assessment, pmh, triage_note, nurse_esi``.

Curation keeps records with meaningful clinical content.  Exclusion reasons
are fixed strings, and only the *first* failing rule is reported, evaluated
in this order:

  1. ``placeholder_complaint`` - chief complaint is empty or a placeholder
     phrase ("see pivot", "see triage", "none"; case-insensitive, trimmed)
  2. ``no_numeric_vitals``     - vital signs contain no numeric measurement
  3. ``missing_exam``          - physical exam empty or a placeholder
  4. ``pmh_none``              - past medical history is literally "none"
"""
from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, TypeVar

from .domain import EsiLevel, FieldSource, OutOfRangeError, StructuredRecord, TriageEncounter

T = TypeVar("T")

ENCOUNTER_FIELDS = (
    "id",
    "age_months",
    "chief_complaint",
    "vital_signs",
    "physical_exam",
    "pivot_assessment",
    "pmh",
    "triage_note",
    "nurse_esi",
)

# pivot_assessment is the only optional field
REQUIRED_FIELDS = tuple(f for f in ENCOUNTER_FIELDS if f != "pivot_assessment")

DEFAULT_PLACEHOLDERS = frozenset({"see pivot", "see triage", "none"})

_NUMERIC_RE = re.compile(r"\d+(?:\.\d+)?")


class SchemaError(ValueError):
    """A record is malformed: missing field, wrong type, or unparseable line."""


class LabelError(ValueError):
    """A record's nurse ESI label is outside 1-5."""


class InvalidKError(ValueError):
    """Chunk count must be a positive integer."""


@dataclass(frozen=True)
class CurationRules:
    placeholder_phrases: frozenset[str] = DEFAULT_PLACEHOLDERS
    require_vitals: bool = True
    require_exam: bool = True
    exclude_pmh_none: bool = True


@dataclass(frozen=True)
class Exclusion:
    id: str
    reason: str


@dataclass(frozen=True)
class CuratedSet:
    retained: tuple[TriageEncounter, ...]
    excluded: tuple[Exclusion, ...]


@dataclass(frozen=True)
class SilverTask:
    """A vignette-generation task whose label carries through unchanged."""

    encounter_id: str
    prompt_context: StructuredRecord
    label: EsiLevel


def _parse_record(raw: dict, where: str) -> TriageEncounter:
    for name in REQUIRED_FIELDS:
        if raw.get(name) is None:
            raise SchemaError(f"{where}: missing required field '{name}'")
    record_id = str(raw["id"])
    try:
        age = int(raw["age_months"])
    except (TypeError, ValueError):
        raise SchemaError(f"{where}: age_months is not an integer: {raw['age_months']!r}")
    if age < 0:
        raise SchemaError(f"{where}: age_months must be non-negative, got {age}")
    try:
        label_int = int(raw["nurse_esi"])
    except (TypeError, ValueError):
        raise LabelError(f"record '{record_id}': nurse_esi is not an integer: {raw['nurse_esi']!r}")
    try:
        nurse_esi = EsiLevel(label_int)
    except OutOfRangeError:
        raise LabelError(f"record '{record_id}': nurse_esi {label_int} outside 1-5")
    pivot = raw.get("pivot_assessment")
    if pivot == "":
        pivot = None
    return TriageEncounter(
        id=record_id,
        age_months=age,
        chief_complaint=str(raw["chief_complaint"]),
        vital_signs=str(raw["vital_signs"]),
        physical_exam=str(raw["physical_exam"]),
        pivot_assessment=None if pivot is None else str(pivot),
        pmh=str(raw["pmh"]),
        triage_note=str(raw["triage_note"]),
        nurse_esi=nurse_esi,
    )


def _load_jsonl(path: Path) -> list[TriageEncounter]:
    encounters = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(raw, dict):
                raise SchemaError(f"{path}:{lineno}: expected an object per line")
            encounters.append(_parse_record(raw, f"{path}:{lineno}"))
    return encounters


def _load_csv(path: Path) -> list[TriageEncounter]:
    encounters = []
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in REQUIRED_FIELDS if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing required columns {missing}")
        for lineno, row in enumerate(reader, start=2):
            encounters.append(_parse_record(row, f"{path}:{lineno}"))
    return encounters


def load_encounters(path: str | Path, format: str = "jsonl") -> list[TriageEncounter]:
    """Load a dataset, preserving input order.

    Raises FileNotFoundError, SchemaError (with line numbers), or
    LabelError (naming the record id) on the first malformed record.
    Record ids must be unique within the dataset.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if format == "jsonl":
        encounters = _load_jsonl(path)
    elif format == "csv":
        encounters = _load_csv(path)
    else:
        raise SchemaError(f"unknown dataset format '{format}' (expected jsonl or csv)")
    seen: set[str] = set()
    for enc in encounters:
        if enc.id in seen:
            raise SchemaError(f"{path}: duplicate record id '{enc.id}'")
        seen.add(enc.id)
    return encounters


def _is_placeholder(text: str, phrases: frozenset[str]) -> bool:
    # Empty or whitespace-only counts as placeholder: it carries no content.
    stripped = text.strip().lower()
    return stripped == "" or stripped in phrases


def curate(encounters: Sequence[TriageEncounter], rules: CurationRules | None = None) -> CuratedSet:
    """Apply the curation filters, recording the first failing reason per record."""
    rules = rules or CurationRules()
    retained: list[TriageEncounter] = []
    excluded: list[Exclusion] = []
    for enc in encounters:
        reason = _first_failure(enc, rules)
        if reason is None:
            retained.append(enc)
        else:
            excluded.append(Exclusion(id=enc.id, reason=reason))
    return CuratedSet(retained=tuple(retained), excluded=tuple(excluded))


def _first_failure(enc: TriageEncounter, rules: CurationRules) -> str | None:
    if _is_placeholder(enc.chief_complaint, rules.placeholder_phrases):
        return "placeholder_complaint"
    if rules.require_vitals and not _NUMERIC_RE.search(enc.vital_signs):
        return "no_numeric_vitals"
    if rules.require_exam and _is_placeholder(enc.physical_exam, rules.placeholder_phrases):
        return "missing_exam"
    if rules.exclude_pmh_none and enc.pmh.strip().lower() == "none":
        return "pmh_none"
    return None


def partition_chunks(records: Sequence[T], k: int) -> list[list[T]]:
    """Split ``records`` into k order-preserving chunks with sizes differing
    by at most one; the first ``len(records) % k`` chunks carry the extra
    element."""
    if not isinstance(k, int) or k < 1:
        raise InvalidKError(f"k must be a positive integer, got {k!r}")
    n = len(records)
    base, extra = divmod(n, k)
    chunks: list[list[T]] = []
    start = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        chunks.append(list(records[start : start + size]))
        start += size
    return chunks


def build_silver_tasks(encounters: Iterable[TriageEncounter]) -> list[SilverTask]:
    """Build vignette-generation tasks from encounters that have both vital
    signs and physical exam content, carrying the nurse label through."""
    tasks = []
    for enc in encounters:
        if not enc.vital_signs.strip() or not enc.physical_exam.strip():
            continue
        context = StructuredRecord(
            chief_complaint=enc.chief_complaint,
            vital_signs=enc.vital_signs,
            physical_exam=enc.physical_exam,
            source=FieldSource.HUMAN,
        )
        tasks.append(SilverTask(encounter_id=enc.id, prompt_context=context, label=enc.nurse_esi))
    return tasks


def write_exclusion_report(curated: CuratedSet, path: str | Path) -> None:
    """Write the per-record exclusion reasons as JSONL of {id, reason}."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for exc in curated.excluded:
            fh.write(json.dumps({"id": exc.id, "reason": exc.reason}) + "\n")
