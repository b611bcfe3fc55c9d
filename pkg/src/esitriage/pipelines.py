"""The six prompting pipelines and the missing-information ablations.

Each pipeline is a fixed sequence of stages over a completion backend:
optional structured-field extraction, optional vignette generation, then a
final acuity prediction parsed from model text.  Ablations empty exactly
one encounter field before any stage runs; preconditions are checked on
the un-ablated encounter, since emptying a field is precisely the scenario
under study.

Prediction records serialize to JSONL with a fixed field order so that
run artifacts are byte-stable.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, replace
from enum import Enum
from typing import TYPE_CHECKING

from .backend import Completion, CompletionBackend, ParseFailureError, RETRY_INSTRUCTION, parse_esi
from .domain import (
    ClinicalVignette,
    EsiLevel,
    FieldSource,
    StructuredRecord,
    TriageEncounter,
    VignetteSource,
)
from .prompts import PromptPack, TemplateId, render_prompt
from .rag import RagOptions, RetrievedPassage, augment_prompt, retrieve

if TYPE_CHECKING:
    from .ensemble import EnsembleOptions, EnsembleTrace


class PipelineKind(str, Enum):
    NOTE_TO_ESI = "note_to_esi"
    NOTE_TO_VIGNETTE_TO_ESI = "note_to_vignette_to_esi"
    HUMAN_STRUCTURED_TO_ESI = "human_structured_to_esi"
    NOTE_TO_STRUCTURED_TO_ESI = "note_to_structured_to_esi"
    HUMAN_STRUCTURED_TO_VIGNETTE_TO_ESI = "human_structured_to_vignette_to_esi"
    MODEL_STRUCTURED_TO_VIGNETTE_TO_ESI = "model_structured_to_vignette_to_esi"


class Ablation(str, Enum):
    NONE = "none"
    DROP_VITALS = "drop_vitals"
    DROP_EXAM = "drop_exam"


# Which intermediates each pipeline produces: (structured source, vignette source).
INTERMEDIATE_TABLE: dict[PipelineKind, tuple[FieldSource | None, VignetteSource | None]] = {
    PipelineKind.NOTE_TO_ESI: (None, None),
    PipelineKind.NOTE_TO_VIGNETTE_TO_ESI: (None, VignetteSource.RAW_NOTE),
    PipelineKind.HUMAN_STRUCTURED_TO_ESI: (FieldSource.HUMAN, None),
    PipelineKind.NOTE_TO_STRUCTURED_TO_ESI: (FieldSource.MODEL, None),
    PipelineKind.HUMAN_STRUCTURED_TO_VIGNETTE_TO_ESI: (FieldSource.HUMAN, VignetteSource.HUMAN_STRUCTURED),
    PipelineKind.MODEL_STRUCTURED_TO_VIGNETTE_TO_ESI: (FieldSource.MODEL, VignetteSource.MODEL_STRUCTURED),
}

VIGNETTE_PIPELINES = frozenset(
    kind for kind, (_, vignette) in INTERMEDIATE_TABLE.items() if vignette is not None
)

_NOTE_PIPELINES = frozenset(
    {
        PipelineKind.NOTE_TO_ESI,
        PipelineKind.NOTE_TO_VIGNETTE_TO_ESI,
        PipelineKind.NOTE_TO_STRUCTURED_TO_ESI,
        PipelineKind.MODEL_STRUCTURED_TO_VIGNETTE_TO_ESI,
    }
)


class PipelineInputError(ValueError):
    """The encounter lacks a field the chosen pipeline requires."""


class EmptyVignetteError(RuntimeError):
    """The model returned blank vignette text twice."""


class StageError(RuntimeError):
    """A backend failure, wrapped with the name of the failing stage."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class SaliencyVector:
    tokens: tuple[str, ...]
    scores: tuple[float, ...]


@dataclass(frozen=True)
class PredictionRecord:
    """Full provenance of one prediction: inputs, intermediates, votes,
    retrieved passages, raw model text, and timing."""

    encounter_id: str
    pipeline: PipelineKind
    ablation: Ablation
    predicted: EsiLevel | None
    parse_failed: bool
    nurse_esi: EsiLevel | None
    structured: StructuredRecord | None
    vignette: ClinicalVignette | None
    ensemble: "EnsembleTrace | None"
    retrieved: tuple[RetrievedPassage, ...] | None
    saliency: SaliencyVector | None
    raw_model_text: str
    latency_seconds: float
    backend_id: str


def apply_ablation(encounter: TriageEncounter, ablation: Ablation) -> TriageEncounter:
    """Empty exactly the targeted field; every other field is untouched."""
    if ablation is Ablation.NONE:
        return encounter
    if ablation is Ablation.DROP_VITALS:
        return replace(encounter, vital_signs="")
    if ablation is Ablation.DROP_EXAM:
        return replace(encounter, physical_exam="")
    raise ValueError(f"unknown ablation {ablation!r}")


_SECTION_LABELS = {
    "chief complaint": "chief_complaint",
    "vital signs": "vital_signs",
    "physical exam": "physical_exam",
}
_SECTION_RE = re.compile(r"^\s*(chief complaint|vital signs|physical exam)\s*:\s*(.*)$", re.IGNORECASE)


def _parse_sections(text: str) -> dict[str, str]:
    """Parse the three labeled sections from extraction output; a section
    runs until the next label or end of text.  Missing sections are ''."""
    fields = {name: "" for name in _SECTION_LABELS.values()}
    current: str | None = None
    parts: dict[str, list[str]] = {}
    for line in text.splitlines():
        match = _SECTION_RE.match(line)
        if match:
            current = _SECTION_LABELS[match.group(1).lower()]
            parts.setdefault(current, [])
            remainder = match.group(2).strip()
            if remainder:
                parts[current].append(remainder)
        elif current is not None and line.strip():
            parts[current].append(line.strip())
    for name, chunks in parts.items():
        fields[name] = "\n".join(chunks)
    return fields


def extract_structured(
    encounter: TriageEncounter, backend: CompletionBackend, pack: PromptPack
) -> tuple[StructuredRecord, float]:
    """Model-extract the three structured fields from the triage note.

    Returns the record plus the stage latency.
    """
    if not encounter.triage_note.strip():
        raise PipelineInputError("extract_structured requires a non-empty triage note")
    prompt = render_prompt(pack.get(TemplateId.EXTRACT_STRUCTURED), {"note": encounter.triage_note})
    completion = _complete_stage(backend, prompt, stage="extract_structured")
    fields = _parse_sections(completion.text)
    record = StructuredRecord(
        chief_complaint=fields["chief_complaint"],
        vital_signs=fields["vital_signs"],
        physical_exam=fields["physical_exam"],
        source=FieldSource.MODEL,
    )
    return record, completion.latency_seconds


def _vignette_content(source: TriageEncounter | StructuredRecord) -> tuple[str, VignetteSource]:
    if isinstance(source, TriageEncounter):
        if not source.triage_note.strip():
            raise PipelineInputError("vignette generation from an encounter requires a triage note")
        content = f"Age: {source.age_months} months\nTriage note: {source.triage_note}"
        return content, VignetteSource.RAW_NOTE
    if not any(
        f.strip() for f in (source.chief_complaint, source.vital_signs, source.physical_exam)
    ):
        raise PipelineInputError("vignette generation requires at least one non-empty clinical field")
    content = (
        f"Chief complaint: {source.chief_complaint}\n"
        f"Vital signs: {source.vital_signs}\n"
        f"Physical exam: {source.physical_exam}"
    )
    derived = (
        VignetteSource.HUMAN_STRUCTURED
        if source.source is FieldSource.HUMAN
        else VignetteSource.MODEL_STRUCTURED
    )
    return content, derived


def generate_vignette(
    source: TriageEncounter | StructuredRecord, backend: CompletionBackend, pack: PromptPack
) -> tuple[ClinicalVignette, float]:
    """Generate a vignette from a note or structured fields; one retry on a
    blank response, then EmptyVignetteError."""
    content, derived = _vignette_content(source)
    prompt = render_prompt(pack.get(TemplateId.GENERATE_VIGNETTE), {"content": content})
    completion = _complete_stage(backend, prompt, stage="generate_vignette")
    latency = completion.latency_seconds
    if not completion.text.strip():
        completion = _complete_stage(backend, prompt, stage="generate_vignette")
        latency += completion.latency_seconds
        if not completion.text.strip():
            raise EmptyVignetteError("model returned blank vignette text twice")
    return ClinicalVignette(text=completion.text.strip(), derived_from=derived), latency


def _complete_stage(backend: CompletionBackend, prompt: str, stage: str) -> Completion:
    from .backend import BackendError

    try:
        return backend.complete(prompt)
    except BackendError as exc:
        raise StageError(stage, exc) from exc


def predict_level(
    backend: CompletionBackend, prompt: str, stage: str = "predict"
) -> tuple[EsiLevel | None, Completion, float]:
    """Complete and parse an ESI level, re-asking once with an appended
    single-digit instruction on parse failure.  Returns (level or None,
    the final completion, total latency)."""
    completion = _complete_stage(backend, prompt, stage)
    latency = completion.latency_seconds
    try:
        return parse_esi(completion.text), completion, latency
    except ParseFailureError:
        retry = _complete_stage(backend, f"{prompt}\n\n{RETRY_INSTRUCTION}", stage)
        latency += retry.latency_seconds
        try:
            return parse_esi(retry.text), retry, latency
        except ParseFailureError:
            return None, retry, latency


def _required_fields(kind: PipelineKind, encounter: TriageEncounter) -> None:
    if kind in _NOTE_PIPELINES and not encounter.triage_note.strip():
        raise PipelineInputError(f"{kind.value} requires a non-empty triage_note")
    if kind in (PipelineKind.HUMAN_STRUCTURED_TO_ESI, PipelineKind.HUMAN_STRUCTURED_TO_VIGNETTE_TO_ESI):
        for name in ("chief_complaint", "vital_signs", "physical_exam"):
            if not getattr(encounter, name).strip():
                raise PipelineInputError(f"{kind.value} requires a non-empty {name}")


def _structured_as_text(record: StructuredRecord) -> str:
    return (
        f"Chief complaint: {record.chief_complaint}\n"
        f"Vital signs: {record.vital_signs}\n"
        f"Physical exam: {record.physical_exam}"
    )


def run_pipeline(
    kind: PipelineKind,
    encounter: TriageEncounter,
    backend: CompletionBackend,
    pack: PromptPack,
    ablation: Ablation = Ablation.NONE,
    rag: RagOptions | None = None,
    ensemble: "EnsembleOptions | None" = None,
) -> PredictionRecord:
    """Run one pipeline over one encounter and return its full provenance.

    ``rag`` swaps the final prediction prompt for the retrieval-augmented
    variant; ``ensemble`` replaces the final single prediction with a
    multi-agent vote over the generated vignette (vignette pipelines only).
    At most one of the two may be given.
    """
    if rag is not None and ensemble is not None:
        raise ValueError("rag and ensemble strategies are mutually exclusive")
    _required_fields(kind, encounter)
    ablated = apply_ablation(encounter, ablation)

    latency = 0.0
    structured: StructuredRecord | None = None
    vignette: ClinicalVignette | None = None

    structured_source, vignette_source = INTERMEDIATE_TABLE[kind]
    if structured_source is FieldSource.HUMAN:
        structured = StructuredRecord(
            chief_complaint=ablated.chief_complaint,
            vital_signs=ablated.vital_signs,
            physical_exam=ablated.physical_exam,
            source=FieldSource.HUMAN,
        )
    elif structured_source is FieldSource.MODEL:
        structured, stage_latency = extract_structured(ablated, backend, pack)
        latency += stage_latency

    if vignette_source is not None:
        source = ablated if vignette_source is VignetteSource.RAW_NOTE else structured
        assert source is not None
        vignette, stage_latency = generate_vignette(source, backend, pack)
        latency += stage_latency

    if ensemble is not None:
        if kind not in VIGNETTE_PIPELINES:
            raise ValueError(f"ensemble strategy requires a vignette pipeline, not {kind.value}")
        from .ensemble import run_ensemble

        assert vignette is not None
        return run_ensemble(
            vignette,
            n_agents=ensemble.n_agents,
            rounds=ensemble.rounds,
            backend=backend,
            pack=pack,
            encounter_id=encounter.id,
            nurse_esi=encounter.nurse_esi,
            pipeline=kind,
            ablation=ablation,
            structured=structured,
            prior_latency=latency,
        )

    if vignette is not None:
        final_input = vignette.text
        template_id = TemplateId.PREDICT_FROM_VIGNETTE
        bindings = {"vignette": vignette.text}
    elif structured is not None:
        final_input = _structured_as_text(structured)
        template_id = TemplateId.PREDICT_FROM_STRUCTURED
        bindings = {
            "chief_complaint": structured.chief_complaint,
            "vital_signs": structured.vital_signs,
            "physical_exam": structured.physical_exam,
        }
    else:
        final_input = ablated.triage_note
        template_id = TemplateId.PREDICT_FROM_NOTE
        bindings = {"note": ablated.triage_note}

    retrieved: tuple[RetrievedPassage, ...] | None = None
    if rag is not None:
        ranked = retrieve(rag.index, final_input, rag.k)
        retrieved = tuple(RetrievedPassage(p.passage_id, score) for p, score in ranked)
        prompt = render_prompt(pack.get(TemplateId.RAG_PREDICT), {"input": final_input})
        prompt = augment_prompt(prompt, [p for p, _ in ranked])
    else:
        prompt = render_prompt(pack.get(template_id), bindings)

    level, completion, stage_latency = predict_level(backend, prompt)
    latency += stage_latency

    saliency = None
    if completion.saliency is not None:
        saliency = SaliencyVector(
            tokens=tuple(t for t, _ in completion.saliency),
            scores=tuple(s for _, s in completion.saliency),
        )

    return PredictionRecord(
        encounter_id=encounter.id,
        pipeline=kind,
        ablation=ablation,
        predicted=level,
        parse_failed=level is None,
        nurse_esi=encounter.nurse_esi,
        structured=structured,
        vignette=vignette,
        ensemble=None,
        retrieved=retrieved,
        saliency=saliency,
        raw_model_text=completion.text,
        latency_seconds=latency,
        backend_id=completion.backend_id,
    )


# ---------------------------------------------------------------------------
# JSONL serialization (fixed field order for byte-stable artifacts)
# ---------------------------------------------------------------------------


def record_to_dict(record: PredictionRecord) -> dict:
    intermediates: dict = {}
    if record.structured is not None:
        intermediates["structured"] = {
            "chief_complaint": record.structured.chief_complaint,
            "vital_signs": record.structured.vital_signs,
            "physical_exam": record.structured.physical_exam,
            "source": record.structured.source.value,
        }
    if record.vignette is not None:
        intermediates["vignette"] = {
            "text": record.vignette.text,
            "derived_from": record.vignette.derived_from.value,
        }
    return {
        "encounter_id": record.encounter_id,
        "pipeline": record.pipeline.value,
        "ablation": record.ablation.value,
        "predicted": record.predicted.value if record.predicted else None,
        "parse_failed": record.parse_failed,
        "nurse_esi": record.nurse_esi.value if record.nurse_esi else None,
        "intermediates": intermediates,
        "ensemble": record.ensemble.to_dict() if record.ensemble else None,
        "rag": (
            [{"passage_id": r.passage_id, "score": r.score} for r in record.retrieved]
            if record.retrieved is not None
            else None
        ),
        "saliency": (
            {"tokens": list(record.saliency.tokens), "scores": list(record.saliency.scores)}
            if record.saliency
            else None
        ),
        "raw_model_text": record.raw_model_text,
        "latency_seconds": record.latency_seconds,
        "backend_id": record.backend_id,
    }


def record_from_dict(raw: dict) -> PredictionRecord:
    from .ensemble import EnsembleTrace

    intermediates = raw.get("intermediates") or {}
    structured = None
    if intermediates.get("structured"):
        s = intermediates["structured"]
        structured = StructuredRecord(
            chief_complaint=s["chief_complaint"],
            vital_signs=s["vital_signs"],
            physical_exam=s["physical_exam"],
            source=FieldSource(s["source"]),
        )
    vignette = None
    if intermediates.get("vignette"):
        v = intermediates["vignette"]
        vignette = ClinicalVignette(text=v["text"], derived_from=VignetteSource(v["derived_from"]))
    retrieved = None
    if raw.get("rag") is not None:
        retrieved = tuple(RetrievedPassage(r["passage_id"], r["score"]) for r in raw["rag"])
    saliency = None
    if raw.get("saliency"):
        saliency = SaliencyVector(
            tokens=tuple(raw["saliency"]["tokens"]), scores=tuple(raw["saliency"]["scores"])
        )
    return PredictionRecord(
        encounter_id=raw["encounter_id"],
        pipeline=PipelineKind(raw["pipeline"]),
        ablation=Ablation(raw["ablation"]),
        predicted=EsiLevel(raw["predicted"]) if raw.get("predicted") else None,
        parse_failed=raw["parse_failed"],
        nurse_esi=EsiLevel(raw["nurse_esi"]) if raw.get("nurse_esi") else None,
        structured=structured,
        vignette=vignette,
        ensemble=EnsembleTrace.from_dict(raw["ensemble"]) if raw.get("ensemble") else None,
        retrieved=retrieved,
        saliency=saliency,
        raw_model_text=raw["raw_model_text"],
        latency_seconds=raw["latency_seconds"],
        backend_id=raw["backend_id"],
    )
