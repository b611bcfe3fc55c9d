from __future__ import annotations

from importlib import resources
from pathlib import Path

import pytest

from esitriage.backend import HeuristicBackend
from esitriage.domain import EsiLevel, TriageEncounter
from esitriage.prompts import default_prompt_pack


def data_path(name: str) -> Path:
    return Path(str(resources.files("esitriage.data").joinpath(name)))


def make_encounter(**overrides) -> TriageEncounter:
    fields = dict(
        id="enc-test",
        age_months=30,
        chief_complaint="Cough and trouble breathing",
        vital_signs="RR 48, SpO2 91%, T 37.9",
        physical_exam="Moderate respiratory distress, subcostal retractions",
        pivot_assessment=None,
        pmh="Former 34-week preemie",
        triage_note="2-year-old with increased work of breathing and visible respiratory distress per mom.",
        nurse_esi=EsiLevel(2),
    )
    fields.update(overrides)
    return TriageEncounter(**fields)


@pytest.fixture(scope="session")
def pack():
    return default_prompt_pack()


@pytest.fixture()
def heuristic():
    return HeuristicBackend(seed=0)


@pytest.fixture(scope="session")
def demo_dataset_path() -> Path:
    return data_path("demo_encounters.jsonl")


@pytest.fixture(scope="session")
def curation_fixture_path() -> Path:
    return data_path("curation_fixture.jsonl")


@pytest.fixture(scope="session")
def handbook_corpus_path() -> Path:
    return data_path("handbook_passages.jsonl")
