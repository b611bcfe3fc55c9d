"""Core vocabulary types for ESI triage: acuity levels, encounters, and
error classification.

Acuity ordering is encoded once here and imported everywhere else: a
numerically *lower* ESI value means *higher* acuity, so the "safer"
direction for tie-breaking is toward the lower value.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class OutOfRangeError(ValueError):
    """Raised when an integer outside 1-5 is used as an ESI level."""


@dataclass(frozen=True, order=True)
class EsiLevel:
    """A validated acuity level, 1 (highest acuity) through 5 (lowest)."""

    value: int

    def __post_init__(self) -> None:
        if not isinstance(self.value, int) or isinstance(self.value, bool):
            raise OutOfRangeError(f"ESI level must be an integer, got {self.value!r}")
        if not 1 <= self.value <= 5:
            raise OutOfRangeError(f"ESI level must be in 1-5, got {self.value}")

    def __str__(self) -> str:
        return str(self.value)


ESI_LEVELS = tuple(EsiLevel(v) for v in range(1, 6))


def esi_from_int(i: int) -> EsiLevel:
    """Return the EsiLevel for ``i``, raising OutOfRangeError outside 1-5."""
    return EsiLevel(i)


class FieldSource(str, Enum):
    """Whether structured fields were curated by a human or extracted by a model."""

    HUMAN = "human"
    MODEL = "model"


class VignetteSource(str, Enum):
    """What a clinical vignette was generated from."""

    RAW_NOTE = "raw_note"
    HUMAN_STRUCTURED = "human_structured"
    MODEL_STRUCTURED = "model_structured"


@dataclass(frozen=True)
class TriageEncounter:
    """One ED visit as captured at triage.

    ``nurse_esi`` is the reference label; every record used for evaluation
    must carry it (dataset loading enforces this), but ad-hoc encounters
    submitted for interactive prediction may omit it.  ``pivot_assessment``
    is the supplemental observation field used when vitals are unavailable
    and may be absent.
    """

    id: str
    age_months: int
    chief_complaint: str
    vital_signs: str
    physical_exam: str
    pivot_assessment: str | None
    pmh: str
    triage_note: str
    nurse_esi: EsiLevel | None

    def __post_init__(self) -> None:
        if self.age_months < 0:
            raise ValueError(f"age_months must be non-negative, got {self.age_months}")


@dataclass(frozen=True)
class StructuredRecord:
    """The three structured triage fields, human-curated or model-extracted."""

    chief_complaint: str
    vital_signs: str
    physical_exam: str
    source: FieldSource


@dataclass(frozen=True)
class ClinicalVignette:
    """A concise narrative summary used as a cleaner prediction input."""

    text: str
    derived_from: VignetteSource


@dataclass(frozen=True)
class ErrorClass:
    """Triage-error classification of one (reference, prediction) pair.

    Exactly one of concordant/undertriage/overtriage is true, and each
    significance flag implies its parent flag.
    """

    concordant: bool
    undertriage: bool
    overtriage: bool
    significant_undertriage: bool
    significant_overtriage: bool


def classify_error(truth: EsiLevel, pred: EsiLevel) -> ErrorClass:
    """Classify a prediction against the nurse-assigned reference level.

    Undertriage is a prediction of lower acuity (numerically higher level)
    than the reference; overtriage the opposite.  The significant subsets
    are the clinically severe ones: true ESI 2 predicted 3-5, and true
    ESI 3-5 predicted 1 or 2.  A true level of 1 predicted >=3 is plain
    undertriage, not significant: ESI-1 encounters are excluded from
    evaluation datasets, so no significance rule is defined for them.
    """
    under = pred.value > truth.value
    over = pred.value < truth.value
    return ErrorClass(
        concordant=pred.value == truth.value,
        undertriage=under,
        overtriage=over,
        significant_undertriage=truth.value == 2 and pred.value in (3, 4, 5),
        significant_overtriage=truth.value in (3, 4, 5) and pred.value in (1, 2),
    )
