"""Prompt templates and the versioned prompt pack.

Prompt bodies are configuration, not code: they ship in a single JSON pack
file mapping template id to body, with a version string recorded in every
run artifact.  Placeholders use ``{name}`` syntax and are substituted in a
single pass, so placeholder-looking text inside bound values is never
re-expanded.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

_PLACEHOLDER_RE = re.compile(r"\{([a-z_]+)\}")


class UnboundPlaceholderError(KeyError):
    """A template placeholder has no binding."""

    def __init__(self, name: str):
        super().__init__(name)
        self.name = name


class PromptPackError(ValueError):
    """The prompt pack file is malformed or incomplete."""


class TemplateId(str, Enum):
    PREDICT_FROM_NOTE = "predict_from_note"
    PREDICT_FROM_VIGNETTE = "predict_from_vignette"
    PREDICT_FROM_STRUCTURED = "predict_from_structured"
    EXTRACT_STRUCTURED = "extract_structured"
    GENERATE_VIGNETTE = "generate_vignette"
    AGENT_SAFETY_FIRST = "agent_safety_first"
    AGENT_GUIDELINE_STRICT = "agent_guideline_strict"
    AGENT_RESOURCE_AWARE = "agent_resource_aware"
    AGENT_RED_FLAG_SENTINEL = "agent_red_flag_sentinel"
    DEBATE_REVISION = "debate_revision"
    RAG_PREDICT = "rag_predict"


# Placeholder contract per template; packs are validated against this at
# load time so a renamed placeholder fails loudly instead of at render time.
REQUIRED_PLACEHOLDERS: dict[TemplateId, frozenset[str]] = {
    TemplateId.PREDICT_FROM_NOTE: frozenset({"note"}),
    TemplateId.PREDICT_FROM_VIGNETTE: frozenset({"vignette"}),
    TemplateId.PREDICT_FROM_STRUCTURED: frozenset({"chief_complaint", "vital_signs", "physical_exam"}),
    TemplateId.EXTRACT_STRUCTURED: frozenset({"note"}),
    TemplateId.GENERATE_VIGNETTE: frozenset({"content"}),
    TemplateId.AGENT_SAFETY_FIRST: frozenset({"vignette"}),
    TemplateId.AGENT_GUIDELINE_STRICT: frozenset({"vignette"}),
    TemplateId.AGENT_RESOURCE_AWARE: frozenset({"vignette"}),
    TemplateId.AGENT_RED_FLAG_SENTINEL: frozenset({"vignette"}),
    TemplateId.DEBATE_REVISION: frozenset({"vignette", "own_level", "own_rationale", "peer_summary"}),
    TemplateId.RAG_PREDICT: frozenset({"input"}),
}


@dataclass(frozen=True)
class PromptTemplate:
    """A template body plus its declared placeholder set.

    Placeholders found in the body must all be declared; by default the
    declared set is derived from the body.
    """

    template_id: TemplateId
    body: str
    placeholders: frozenset[str] = field(default=frozenset())

    def __post_init__(self) -> None:
        found = frozenset(_PLACEHOLDER_RE.findall(self.body))
        declared = self.placeholders or found
        undeclared = found - declared
        if undeclared:
            raise PromptPackError(
                f"template '{self.template_id.value}' uses undeclared placeholders: {sorted(undeclared)}"
            )
        object.__setattr__(self, "placeholders", declared)


def render_prompt(template: PromptTemplate, bindings: dict[str, str]) -> str:
    """Substitute every placeholder in one pass; missing bindings raise
    UnboundPlaceholderError."""
    found = _PLACEHOLDER_RE.findall(template.body)
    for name in found:
        if name not in bindings:
            raise UnboundPlaceholderError(name)

    def _sub(match: re.Match) -> str:
        return bindings[match.group(1)]

    return _PLACEHOLDER_RE.sub(_sub, template.body)


@dataclass(frozen=True)
class PromptPack:
    version: str
    templates: dict[TemplateId, PromptTemplate]

    def get(self, template_id: TemplateId) -> PromptTemplate:
        return self.templates[template_id]


def _validate_pack(raw: dict, where: str) -> PromptPack:
    if not isinstance(raw, dict):
        raise PromptPackError(f"{where}: prompt pack must be a JSON object")
    unknown = set(raw) - {"version", "templates"}
    if unknown:
        raise PromptPackError(f"{where}: unknown keys {sorted(unknown)}")
    version = raw.get("version")
    if not isinstance(version, str) or not version:
        raise PromptPackError(f"{where}: 'version' must be a non-empty string")
    bodies = raw.get("templates")
    if not isinstance(bodies, dict):
        raise PromptPackError(f"{where}: 'templates' must be an object")
    known_ids = {tid.value for tid in TemplateId}
    unknown_ids = set(bodies) - known_ids
    if unknown_ids:
        raise PromptPackError(f"{where}: unknown template ids {sorted(unknown_ids)}")
    missing = known_ids - set(bodies)
    if missing:
        raise PromptPackError(f"{where}: missing template ids {sorted(missing)}")
    templates = {}
    for tid in TemplateId:
        body = bodies[tid.value]
        if not isinstance(body, str) or not body.strip():
            raise PromptPackError(f"{where}: template '{tid.value}' body must be non-empty text")
        template = PromptTemplate(template_id=tid, body=body)
        required = REQUIRED_PLACEHOLDERS[tid]
        if template.placeholders != required:
            raise PromptPackError(
                f"{where}: template '{tid.value}' must use exactly placeholders "
                f"{sorted(required)}, found {sorted(template.placeholders)}"
            )
        templates[tid] = template
    return PromptPack(version=version, templates=templates)


def load_prompt_pack(path: str | Path) -> PromptPack:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise PromptPackError(f"{path}: invalid JSON: {exc}") from exc
    return _validate_pack(raw, str(path))


def default_prompt_pack() -> PromptPack:
    """Load the bundled pack shipped with the package."""
    text = resources.files("esitriage.data").joinpath("prompt_pack.json").read_text("utf-8")
    return _validate_pack(json.loads(text), "bundled prompt_pack.json")
