"""Language-model completion backends and ESI extraction.

Three backend kinds sit behind one ``complete(prompt) -> Completion``
surface:

* ``scripted`` replays canned responses keyed by a SHA-256 digest of the
  exact prompt text, so any template drift breaks replay loudly.
* ``heuristic`` is a deterministic keyword-rule mock with a default of
  ESI 4; it understands the bundled prompt pack's task phrasing well
  enough to answer extraction, vignette, and prediction prompts with
  meaningful variety, and attaches token-saliency scores to predictions.
* ``http`` talks to any chat-completion server speaking the
  ``POST {base_url}/v1/chat/completions`` wire format.

Scripted and heuristic backends report a latency of 0.0 so that run
artifacts are byte-identical across repeated runs.
"""
from __future__ import annotations

import hashlib
import json
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import requests

from .domain import EsiLevel

DEFAULT_TEMPERATURE = 0.0  # predictive calls maximize reproducibility
RETRY_INSTRUCTION = "Answer with a single digit 1-5."


class BackendError(Exception):
    """Base class for completion failures."""


class FixtureMissError(BackendError):
    def __init__(self, digest: str):
        super().__init__(f"no scripted response for prompt digest {digest}")
        self.digest = digest


class BackendTimeoutError(BackendError):
    pass


class HttpStatusError(BackendError):
    def __init__(self, status_code: int, body_excerpt: str = ""):
        super().__init__(f"HTTP {status_code}: {body_excerpt[:200]}")
        self.status_code = status_code


class MalformedResponseError(BackendError):
    pass


class TransportError(BackendError):
    """Connection-level failure before any HTTP status was received."""


class ParseFailureError(ValueError):
    """No ESI level could be extracted from model text."""

    def __init__(self, text: str):
        excerpt = text.strip().replace("\n", " ")[:80]
        super().__init__(f"no ESI level found in model output: {excerpt!r}")
        self.excerpt = excerpt


@dataclass(frozen=True)
class Completion:
    text: str
    latency_seconds: float
    backend_id: str
    saliency: tuple[tuple[str, float], ...] | None = None

    def __post_init__(self) -> None:
        if self.latency_seconds < 0:
            raise ValueError("latency_seconds must be >= 0")


class CompletionBackend(Protocol):
    backend_id: str

    def complete(self, prompt: str) -> Completion: ...


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Backend specs (parsed from config dicts)
# ---------------------------------------------------------------------------


class BackendSpecError(ValueError):
    pass


@dataclass(frozen=True)
class ScriptedSpec:
    fixture_path: str


@dataclass(frozen=True)
class HeuristicSpec:
    seed: int = 0


@dataclass(frozen=True)
class HttpSpec:
    base_url: str
    model: str
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = 256
    timeout_seconds: float = 30.0
    retries: int = 2
    max_in_flight: int = 4


BackendSpec = ScriptedSpec | HeuristicSpec | HttpSpec

_SPEC_KEYS = {
    "scripted": {"kind", "fixture_path"},
    "heuristic": {"kind", "seed"},
    "http": {
        "kind",
        "base_url",
        "model",
        "temperature",
        "max_tokens",
        "timeout_seconds",
        "retries",
        "max_in_flight",
    },
}


def parse_backend_spec(raw: dict) -> BackendSpec:
    """Parse a backend config object, failing closed on unknown keys."""
    if not isinstance(raw, dict):
        raise BackendSpecError("backend spec must be an object")
    kind = raw.get("kind")
    if kind not in _SPEC_KEYS:
        raise BackendSpecError(f"unknown backend kind {kind!r} (expected scripted, heuristic, or http)")
    unknown = set(raw) - _SPEC_KEYS[kind]
    if unknown:
        raise BackendSpecError(f"unknown backend keys {sorted(unknown)} for kind '{kind}'")
    if kind == "scripted":
        path = raw.get("fixture_path")
        if not isinstance(path, str) or not path:
            raise BackendSpecError("scripted backend requires 'fixture_path'")
        return ScriptedSpec(fixture_path=path)
    if kind == "heuristic":
        seed = raw.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise BackendSpecError("heuristic 'seed' must be an integer")
        return HeuristicSpec(seed=seed)
    for key in ("base_url", "model"):
        if not isinstance(raw.get(key), str) or not raw[key]:
            raise BackendSpecError(f"http backend requires '{key}'")
    return HttpSpec(
        base_url=raw["base_url"].rstrip("/"),
        model=raw["model"],
        temperature=float(raw.get("temperature", DEFAULT_TEMPERATURE)),
        max_tokens=int(raw.get("max_tokens", 256)),
        timeout_seconds=float(raw.get("timeout_seconds", 30.0)),
        retries=int(raw.get("retries", 2)),
        max_in_flight=int(raw.get("max_in_flight", 4)),
    )


def build_backend(spec: BackendSpec) -> CompletionBackend:
    if isinstance(spec, ScriptedSpec):
        return ScriptedBackend.from_fixture_file(spec.fixture_path)
    if isinstance(spec, HeuristicSpec):
        return HeuristicBackend(seed=spec.seed)
    if isinstance(spec, HttpSpec):
        return HttpBackend(spec)
    raise BackendSpecError(f"unsupported backend spec: {spec!r}")


# ---------------------------------------------------------------------------
# Scripted backend
# ---------------------------------------------------------------------------


class ScriptedBackend:
    """Replays fixture responses keyed by SHA-256 of the exact prompt."""

    def __init__(self, responses: dict[str, str], backend_id: str = "scripted"):
        self._responses = dict(responses)
        self.backend_id = backend_id

    @classmethod
    def from_fixture_file(cls, path: str | Path) -> "ScriptedBackend":
        path = Path(path)
        responses: dict[str, str] = {}
        with path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                row = json.loads(line)
                if "digest" not in row or "response" not in row:
                    raise BackendSpecError(f"{path}:{lineno}: fixture rows need 'digest' and 'response'")
                responses[row["digest"]] = row["response"]
        return cls(responses, backend_id=f"scripted:{path.name}")

    @classmethod
    def from_prompts(cls, prompt_to_response: dict[str, str], backend_id: str = "scripted") -> "ScriptedBackend":
        """Convenience for tests: key fixtures by prompt text, digested here."""
        return cls({prompt_digest(p): r for p, r in prompt_to_response.items()}, backend_id)

    def complete(self, prompt: str) -> Completion:
        digest = prompt_digest(prompt)
        if digest not in self._responses:
            raise FixtureMissError(digest)
        return Completion(text=self._responses[digest], latency_seconds=0.0, backend_id=self.backend_id)


def write_fixture_file(prompt_to_response: dict[str, str], path: str | Path) -> None:
    """Persist scripted fixtures as JSONL of {digest, response}."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for prompt, response in prompt_to_response.items():
            fh.write(json.dumps({"digest": prompt_digest(prompt), "response": response}) + "\n")


# ---------------------------------------------------------------------------
# Heuristic backend
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HeuristicRule:
    keyword: str
    level: int
    rationale: str
    vignette: str
    chief_complaint: str
    vital_signs: str
    physical_exam: str
    saliency: tuple[tuple[str, float], ...]


# Ordered: the first rule whose keyword occurs in the lowercased prompt wins.
# Authored so that each rule's vignette and structured fields contain the
# rule's own keyword, keeping multi-stage pipelines self-consistent.
HEURISTIC_RULES: tuple[HeuristicRule, ...] = (
    HeuristicRule(
        keyword="unresponsive",
        level=1,
        rationale="Minimally responsive patient; immediate life-saving intervention indicated",
        vignette=(
            "An infant brought in after being found unresponsive at home, now minimally "
            "arousable with weak cry. Immediate resuscitative assessment is underway."
        ),
        chief_complaint="Unresponsive episode",
        vital_signs="HR 52, RR 10, SpO2 84%",
        physical_exam="Minimally arousable, poor tone, unresponsive to voice",
        saliency=(("unresponsive", 0.95), ("arousable", 0.7), ("weak", 0.6), ("infant", 0.3)),
    ),
    HeuristicRule(
        keyword="respiratory distress",
        level=2,
        rationale="High-risk presentation with increased work of breathing",
        vignette=(
            "A young child in moderate respiratory distress with subcostal retractions and "
            "tachypnea; oxygen saturation is borderline and the child appears tired."
        ),
        chief_complaint="Difficulty breathing",
        vital_signs="RR 48, SpO2 91%, T 37.9",
        physical_exam="Moderate respiratory distress with subcostal retractions",
        saliency=(("respiratory", 0.92), ("distress", 0.88), ("retractions", 0.64), ("saturation", 0.55)),
    ),
    HeuristicRule(
        keyword="stridor",
        level=2,
        rationale="Stridor at rest suggests airway narrowing and high-risk status",
        vignette=(
            "A toddler with a barky cough and stridor at rest, anxious but alert, "
            "drinking small sips; oxygen saturation preserved."
        ),
        chief_complaint="Noisy breathing",
        vital_signs="RR 36, SpO2 95%, T 38.1",
        physical_exam="Inspiratory stridor at rest, mild suprasternal retractions",
        saliency=(("stridor", 0.9), ("barky", 0.6), ("airway", 0.5), ("rest", 0.42)),
    ),
    HeuristicRule(
        keyword="dehydration",
        level=3,
        rationale="Likely to need two or more resources including fluids and labs",
        vignette=(
            "A preschool-age child with repeated vomiting and poor intake showing mild "
            "dehydration: dry mucous membranes, alert but subdued."
        ),
        chief_complaint="Vomiting and poor intake",
        vital_signs="HR 128, T 37.6, cap refill 3s",
        physical_exam="Dry mucous membranes, mild dehydration, no focal findings",
        saliency=(("dehydration", 0.8), ("vomiting", 0.62), ("intake", 0.5), ("dry", 0.45)),
    ),
    HeuristicRule(
        keyword="abdominal pain",
        level=3,
        rationale="Abdominal pain with exam findings warrants labs and imaging",
        vignette=(
            "A school-age child with periumbilical abdominal pain migrating to the right "
            "lower quadrant, low-grade fever, and guarding on examination."
        ),
        chief_complaint="Abdominal pain",
        vital_signs="T 38.0, HR 110",
        physical_exam="Right lower quadrant tenderness with guarding; abdominal pain on palpation",
        saliency=(("abdominal", 0.78), ("pain", 0.7), ("guarding", 0.66), ("fever", 0.4)),
    ),
    HeuristicRule(
        keyword="laceration",
        level=4,
        rationale="Single anticipated resource: wound repair",
        vignette=(
            "A child with a small chin laceration after a fall from standing, bleeding "
            "controlled, neurologically intact and playful."
        ),
        chief_complaint="Chin laceration",
        vital_signs="HR 96, T 36.9",
        physical_exam="2 cm chin laceration with edges approximated, no other injury",
        saliency=(("laceration", 0.75), ("bleeding", 0.5), ("fall", 0.42), ("chin", 0.3)),
    ),
    HeuristicRule(
        keyword="sprain",
        level=4,
        rationale="Single anticipated resource: radiograph of the injured joint",
        vignette=(
            "An adolescent with an ankle sprain sustained during sport, mild lateral "
            "swelling, able to bear weight with discomfort."
        ),
        chief_complaint="Ankle injury",
        vital_signs="HR 84, T 36.8",
        physical_exam="Lateral ankle swelling and tenderness consistent with sprain; no deformity",
        saliency=(("sprain", 0.7), ("swelling", 0.5), ("ankle", 0.45), ("weight", 0.3)),
    ),
    HeuristicRule(
        keyword="diaper rash",
        level=5,
        rationale="No resources anticipated beyond reassurance and care advice",
        vignette=(
            "An infant with a localized diaper rash, feeding well, afebrile, comfortable "
            "and well-appearing throughout the visit."
        ),
        chief_complaint="Diaper rash",
        vital_signs="T 36.7, HR 118",
        physical_exam="Erythematous diaper-area rash without spread; well-appearing infant",
        saliency=(("rash", 0.6), ("localized", 0.4), ("comfortable", 0.35), ("afebrile", 0.3)),
    ),
)

DEFAULT_RULE = HeuristicRule(
    keyword="",
    level=4,
    rationale="No high-risk features identified; single resource anticipated",
    vignette=(
        "A stable, well-appearing child with a routine complaint and reassuring "
        "screening; no red flags identified at triage."
    ),
    chief_complaint="General complaint",
    vital_signs="Within normal limits for age",
    physical_exam="Well appearing, no acute findings",
    saliency=(("stable", 0.4), ("well", 0.35), ("routine", 0.3)),
)

# Task markers must match the bundled prompt pack's phrasing.
_EXTRACT_MARKER = "Extract the structured triage fields"
_VIGNETTE_MARKER = "concise clinical vignette"

# Persona markers adjust the predicted level to give ensembles real diversity.
_PERSONA_SHIFTS = (
    ("safety-first triage agent", -1),
    ("resource-aware triage agent", +1),
)

_PREDICT_PHRASES = (
    "ESI: {level}. {rationale}.",
    "ESI level {level}; {rationale}.",
    "Recommended acuity: ESI {level}. {rationale}.",
)


class HeuristicBackend:
    """Deterministic rule-table mock: same prompt, same bytes, any process."""

    def __init__(self, seed: int = 0, rules: tuple[HeuristicRule, ...] = HEURISTIC_RULES):
        self.seed = seed
        self.rules = rules
        self.backend_id = f"heuristic:seed={seed}"

    def _match(self, prompt_lower: str) -> HeuristicRule:
        for rule in self.rules:
            if rule.keyword and rule.keyword in prompt_lower:
                return rule
        return DEFAULT_RULE

    def _phrase_index(self, prompt: str) -> int:
        h = hashlib.sha256(f"{self.seed}:{prompt}".encode("utf-8")).hexdigest()
        return int(h[:8], 16) % len(_PREDICT_PHRASES)

    def complete(self, prompt: str) -> Completion:
        rule = self._match(prompt.lower())
        if _EXTRACT_MARKER in prompt:
            text = (
                f"Chief Complaint: {rule.chief_complaint}\n"
                f"Vital Signs: {rule.vital_signs}\n"
                f"Physical Exam: {rule.physical_exam}"
            )
            return Completion(text=text, latency_seconds=0.0, backend_id=self.backend_id)
        if _VIGNETTE_MARKER in prompt:
            return Completion(text=rule.vignette, latency_seconds=0.0, backend_id=self.backend_id)
        level = rule.level
        for marker, shift in _PERSONA_SHIFTS:
            if marker in prompt:
                level = min(5, max(1, level + shift))
                break
        phrase = _PREDICT_PHRASES[self._phrase_index(prompt)]
        text = phrase.format(level=level, rationale=rule.rationale)
        return Completion(
            text=text,
            latency_seconds=0.0,
            backend_id=self.backend_id,
            saliency=rule.saliency,
        )


# ---------------------------------------------------------------------------
# HTTP backend
# ---------------------------------------------------------------------------


class HttpBackend:
    """Chat-completion client for any server speaking the /v1/chat/completions
    wire format; bounded in-flight requests, bounded retries."""

    def __init__(self, spec: HttpSpec, session: requests.Session | None = None):
        self.spec = spec
        self.backend_id = f"http:{spec.model}"
        self._session = session or requests.Session()
        self._gate = threading.BoundedSemaphore(spec.max_in_flight)

    def complete(self, prompt: str) -> Completion:
        url = f"{self.spec.base_url}/v1/chat/completions"
        payload = {
            "model": self.spec.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.spec.temperature,
            "max_tokens": self.spec.max_tokens,
        }
        attempts = self.spec.retries + 1
        last_error: BackendError | None = None
        start = time.perf_counter()
        for _ in range(attempts):
            try:
                with self._gate:
                    response = self._session.post(url, json=payload, timeout=self.spec.timeout_seconds)
            except requests.Timeout:
                last_error = BackendTimeoutError(f"timed out after {self.spec.timeout_seconds}s: {url}")
                continue
            except requests.RequestException as exc:
                last_error = TransportError(str(exc))
                continue
            if response.status_code != 200:
                last_error = HttpStatusError(response.status_code, response.text)
                continue
            try:
                body = response.json()
                text = body["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                last_error = MalformedResponseError(f"unexpected response shape: {exc}")
                continue
            if not isinstance(text, str):
                last_error = MalformedResponseError("message content is not a string")
                continue
            latency = time.perf_counter() - start
            return Completion(text=text, latency_seconds=latency, backend_id=self.backend_id)
        assert last_error is not None
        raise last_error


# ---------------------------------------------------------------------------
# ESI extraction
# ---------------------------------------------------------------------------

_KEYWORD_RE = re.compile(r"esi|level", re.IGNORECASE)
_STANDALONE_RE = re.compile(r"(?<!\d)(?<!\d\.)[1-5](?!\d)(?!\.\d)")


def parse_esi(text: str) -> EsiLevel:
    """Extract an ESI level from model text.

    First the digit 1-5 appearing within 10 characters after a
    case-insensitive "ESI" or "level"; failing that, the first standalone
    digit 1-5 anywhere (not part of a larger number or a decimal).
    """
    for match in _KEYWORD_RE.finditer(text):
        window = text[match.end() : match.end() + 10]
        for ch in window:
            if ch in "12345":
                return EsiLevel(int(ch))
    fallback = _STANDALONE_RE.search(text)
    if fallback:
        return EsiLevel(int(fallback.group(0)))
    raise ParseFailureError(text)
