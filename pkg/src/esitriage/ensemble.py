"""Multi-agent ESI prediction: persona agents, one-round majority voting
with a safer tie-break, and a two-round debate variant.

Ensembles are nested: the 3-agent panel is the first three personas, the
4-agent panel all four.  Ties always resolve toward the numerically lower
(more acute, safer) level, in round two as well as round one.  A persona
whose completion cannot be parsed after one retry abstains rather than
being assigned a default level; the round fails only if every persona
abstains.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

from .backend import CompletionBackend
from .domain import ClinicalVignette, EsiLevel, StructuredRecord
from .pipelines import Ablation, PipelineKind, PredictionRecord, predict_level
from .prompts import PromptPack, TemplateId, render_prompt


class Persona(str, Enum):
    SAFETY_FIRST = "safety_first"
    GUIDELINE_STRICT = "guideline_strict"
    RESOURCE_AWARE = "resource_aware"
    RED_FLAG_SENTINEL = "red_flag_sentinel"


PERSONA_TEMPLATES: dict[Persona, TemplateId] = {
    Persona.SAFETY_FIRST: TemplateId.AGENT_SAFETY_FIRST,
    Persona.GUIDELINE_STRICT: TemplateId.AGENT_GUIDELINE_STRICT,
    Persona.RESOURCE_AWARE: TemplateId.AGENT_RESOURCE_AWARE,
    Persona.RED_FLAG_SENTINEL: TemplateId.AGENT_RED_FLAG_SENTINEL,
}

PERSONA_ORDER = tuple(Persona)


def personas_for(n_agents: int) -> tuple[Persona, ...]:
    """The nested panels: 3 agents are a prefix of the 4-agent panel."""
    if n_agents not in (3, 4):
        raise ValueError(f"n_agents must be 3 or 4, got {n_agents}")
    return PERSONA_ORDER[:n_agents]


class RoundFailureError(RuntimeError):
    """Every persona in a round failed to produce a parseable vote."""


class EmptyVotesError(ValueError):
    pass


@dataclass(frozen=True)
class AgentVote:
    """One persona's vote; ``level`` is None when the persona abstained."""

    persona: Persona
    level: EsiLevel | None
    rationale: str
    latency_seconds: float = 0.0


@dataclass(frozen=True)
class EnsembleOptions:
    n_agents: int = 3
    rounds: int = 1

    def __post_init__(self) -> None:
        if self.n_agents not in (3, 4):
            raise ValueError(f"n_agents must be 3 or 4, got {self.n_agents}")
        if self.rounds not in (1, 2):
            raise ValueError(f"rounds must be 1 or 2, got {self.rounds}")


@dataclass(frozen=True)
class EnsembleTrace:
    n_agents: int
    rounds: int
    round1: tuple[AgentVote, ...]
    final: tuple[AgentVote, ...]

    def to_dict(self) -> dict:
        def votes(vs: tuple[AgentVote, ...]) -> list[dict]:
            return [
                {
                    "persona": v.persona.value,
                    "level": v.level.value if v.level else None,
                    "rationale": v.rationale,
                }
                for v in vs
            ]

        return {
            "n_agents": self.n_agents,
            "rounds": self.rounds,
            "round1": votes(self.round1),
            "final": votes(self.final),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "EnsembleTrace":
        def votes(rows: list[dict]) -> tuple[AgentVote, ...]:
            return tuple(
                AgentVote(
                    persona=Persona(r["persona"]),
                    level=EsiLevel(r["level"]) if r.get("level") else None,
                    rationale=r["rationale"],
                )
                for r in rows
            )

        return cls(
            n_agents=raw["n_agents"],
            rounds=raw["rounds"],
            round1=votes(raw["round1"]),
            final=votes(raw["final"]),
        )


def majority_vote(votes: Sequence[EsiLevel]) -> EsiLevel:
    """Most frequent level; ties resolve to the numerically smallest
    (safest) among the tied levels."""
    if not votes:
        raise EmptyVotesError("majority_vote requires at least one vote")
    counts: dict[int, int] = {}
    for vote in votes:
        counts[vote.value] = counts.get(vote.value, 0) + 1
    best = max(counts.values())
    return EsiLevel(min(value for value, count in counts.items() if count == best))


def run_agents_round(
    vignette: ClinicalVignette,
    personas: Sequence[Persona],
    backend: CompletionBackend,
    pack: PromptPack,
) -> list[AgentVote]:
    """One independent completion per persona, in input order."""
    if not personas:
        raise ValueError("personas must be non-empty")
    votes = []
    for persona in personas:
        prompt = render_prompt(pack.get(PERSONA_TEMPLATES[persona]), {"vignette": vignette.text})
        level, completion, latency = predict_level(backend, prompt, stage=f"agent:{persona.value}")
        votes.append(
            AgentVote(
                persona=persona,
                level=level,
                rationale=completion.text if level is not None else "",
                latency_seconds=latency,
            )
        )
    if all(v.level is None for v in votes):
        raise RoundFailureError("every persona failed to produce a parseable vote")
    return votes


def _peer_summary(votes: Sequence[AgentVote], own: Persona) -> str:
    lines = []
    for vote in votes:
        if vote.persona is own or vote.level is None:
            continue
        lines.append(f"- {vote.persona.value}: ESI {vote.level.value}. Rationale: {vote.rationale}")
    return "\n".join(lines) if lines else "- (no other votes available)"


def debate_round(
    vignette: ClinicalVignette,
    prior_votes: Sequence[AgentVote],
    backend: CompletionBackend,
    pack: PromptPack,
) -> list[AgentVote]:
    """Each voting persona sees the others' levels and rationales and may
    revise; a parse failure keeps that persona's prior vote.  Personas that
    abstained in the prior round stay abstained."""
    revised = []
    for vote in prior_votes:
        if vote.level is None:
            # abstained in round 1; no debate call, so no fresh latency
            revised.append(replace(vote, latency_seconds=0.0))
            continue
        prompt = render_prompt(
            pack.get(TemplateId.DEBATE_REVISION),
            {
                "vignette": vignette.text,
                "own_level": str(vote.level.value),
                "own_rationale": vote.rationale,
                "peer_summary": _peer_summary(prior_votes, vote.persona),
            },
        )
        level, completion, latency = predict_level(
            backend, prompt, stage=f"debate:{vote.persona.value}"
        )
        if level is None:
            revised.append(
                AgentVote(
                    persona=vote.persona,
                    level=vote.level,
                    rationale=vote.rationale,
                    latency_seconds=latency,
                )
            )
        else:
            revised.append(
                AgentVote(
                    persona=vote.persona,
                    level=level,
                    rationale=completion.text,
                    latency_seconds=latency,
                )
            )
    return revised


def run_ensemble(
    vignette: ClinicalVignette,
    n_agents: int,
    rounds: int,
    backend: CompletionBackend,
    pack: PromptPack,
    encounter_id: str = "",
    nurse_esi: EsiLevel | None = None,
    pipeline: PipelineKind = PipelineKind.NOTE_TO_VIGNETTE_TO_ESI,
    ablation: Ablation = Ablation.NONE,
    structured: StructuredRecord | None = None,
    prior_latency: float = 0.0,
) -> PredictionRecord:
    """Vote (and optionally debate) over a vignette, returning a record
    holding every vote and rationale from every round."""
    options = EnsembleOptions(n_agents=n_agents, rounds=rounds)
    personas = personas_for(options.n_agents)
    round1 = run_agents_round(vignette, personas, backend, pack)
    final = debate_round(vignette, round1, backend, pack) if options.rounds == 2 else round1
    levels = [v.level for v in final if v.level is not None]
    predicted = majority_vote(levels)
    latency = prior_latency + sum(v.latency_seconds for v in round1)
    if options.rounds == 2:
        latency += sum(v.latency_seconds for v in final)
    trace = EnsembleTrace(
        n_agents=options.n_agents,
        rounds=options.rounds,
        round1=tuple(round1),
        final=tuple(final),
    )
    return PredictionRecord(
        encounter_id=encounter_id,
        pipeline=pipeline,
        ablation=ablation,
        predicted=predicted,
        parse_failed=False,
        nurse_esi=nurse_esi,
        structured=structured,
        vignette=vignette,
        ensemble=trace,
        retrieved=None,
        saliency=None,
        raw_model_text="",
        latency_seconds=latency,
        backend_id=backend.backend_id,
    )
