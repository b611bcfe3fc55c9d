"""Stateless HTTP facade for interactive single-encounter prediction.

Endpoints (JSON request/response; field names are fixed and versioned, see
``data/service_schema.json``):

  GET  /v1/health     liveness probe
  GET  /v1/pipelines  enumerates pipeline kinds, strategies, ablations,
                      and the named backends configured at startup
  POST /v1/predict    one prediction with full provenance
  POST /v1/whatif     the same request replayed under a list of ablations

Status codes: 400 schema violation, 422 strategy conflict, 502 backend
failure, 504 backend timeout.  No patient field from any request is logged
at default verbosity, and nothing from a request is persisted beyond its
lifetime.  The console's static assets are served from ``static_dir`` when
configured.
"""
from __future__ import annotations

import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .backend import (
    BackendError,
    BackendSpec,
    BackendSpecError,
    BackendTimeoutError,
    CompletionBackend,
    HeuristicSpec,
    build_backend,
    parse_backend_spec,
)
from .domain import EsiLevel, OutOfRangeError, TriageEncounter
from .ensemble import EnsembleOptions
from .pipelines import (
    Ablation,
    EmptyVignetteError,
    PipelineInputError,
    PipelineKind,
    StageError,
    VIGNETTE_PIPELINES,
    record_to_dict,
    run_pipeline,
)
from .prompts import PromptPack, default_prompt_pack, load_prompt_pack
from .rag import LexicalIndex, Passage, RagOptions, index_corpus, load_corpus

log = logging.getLogger("esitriage.service")

SCHEMA_VERSION = "1"

_ENCOUNTER_KEYS = {
    "id",
    "age_months",
    "chief_complaint",
    "vital_signs",
    "physical_exam",
    "pivot_assessment",
    "pmh",
    "triage_note",
    "nurse_esi",
}
_REQUEST_KEYS = {"encounter", "pipeline", "ablation", "strategy", "backend"}
_STRATEGY_KEYS = {"kind", "n_agents", "rounds", "k"}


class RequestError(ValueError):
    """Maps to an HTTP status: 400 for schema problems, 422 for conflicts."""

    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status


@dataclass(frozen=True)
class ServiceConfig:
    backends: dict[str, BackendSpec]
    default_backend: str
    prompt_pack_path: str | None = None
    rag_corpus_path: str | None = None
    rag_k: int = 3
    static_dir: str | None = None


def load_service_config(path: str | Path) -> ServiceConfig:
    path = Path(path)
    raw = json.loads(path.read_text(encoding="utf-8"))
    allowed = {"backends", "default_backend", "prompt_pack", "rag", "static_dir"}
    unknown = set(raw) - allowed
    if unknown:
        raise BackendSpecError(f"{path}: unknown keys {sorted(unknown)}")
    backends_raw = raw.get("backends")
    if not isinstance(backends_raw, dict) or not backends_raw:
        raise BackendSpecError(f"{path}: 'backends' must be a non-empty object")
    backends = {name: parse_backend_spec(spec) for name, spec in backends_raw.items()}
    default = raw.get("default_backend") or next(iter(backends))
    if default not in backends:
        raise BackendSpecError(f"{path}: default_backend {default!r} is not a configured backend")
    rag_corpus = None
    rag_k = 3
    if raw.get("rag") is not None:
        rag_raw = raw["rag"]
        unknown = set(rag_raw) - {"corpus_path", "k"}
        if unknown:
            raise BackendSpecError(f"{path}: unknown rag keys {sorted(unknown)}")
        rag_corpus = str((path.parent / rag_raw["corpus_path"]).resolve())
        rag_k = int(rag_raw.get("k", 3))
    static_dir = raw.get("static_dir")
    if static_dir is not None:
        static_dir = str((path.parent / static_dir).resolve())
    pack_path = raw.get("prompt_pack")
    if pack_path is not None:
        pack_path = str((path.parent / pack_path).resolve())
    return ServiceConfig(
        backends=backends,
        default_backend=default,
        prompt_pack_path=pack_path,
        rag_corpus_path=rag_corpus,
        rag_k=rag_k,
        static_dir=static_dir,
    )


def demo_service_config(static_dir: str | None = None) -> ServiceConfig:
    """Heuristic-backend config used by tests, the demo script, and the console."""
    return ServiceConfig(
        backends={"demo": HeuristicSpec(seed=0)},
        default_backend="demo",
        static_dir=static_dir,
    )


class TriageService:
    """Request handling, independent of the HTTP plumbing so it can be
    exercised directly in tests.  Shared state is read-only after startup."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.backends: dict[str, CompletionBackend] = {
            name: build_backend(spec) for name, spec in config.backends.items()
        }
        self.pack: PromptPack = (
            load_prompt_pack(config.prompt_pack_path)
            if config.prompt_pack_path
            else default_prompt_pack()
        )
        self.rag_index: LexicalIndex | None = None
        self.rag_passages: dict[int, Passage] = {}
        if config.rag_corpus_path:
            passages = load_corpus(config.rag_corpus_path)
            self.rag_index = index_corpus(passages)
            self.rag_passages = {p.passage_id: p for p in passages}
        self.rag_k = config.rag_k

    # -- request parsing ----------------------------------------------------

    def _parse_encounter(self, raw: dict) -> TriageEncounter:
        if not isinstance(raw, dict):
            raise RequestError(400, "'encounter' must be an object")
        unknown = set(raw) - _ENCOUNTER_KEYS
        if unknown:
            raise RequestError(400, f"unknown encounter fields {sorted(unknown)}")
        if raw.get("age_months") is None:
            raise RequestError(400, "encounter.age_months is required")
        try:
            age = int(raw["age_months"])
        except (TypeError, ValueError):
            raise RequestError(400, "encounter.age_months must be an integer")
        nurse = None
        if raw.get("nurse_esi") is not None:
            try:
                nurse = EsiLevel(int(raw["nurse_esi"]))
            except (TypeError, ValueError, OutOfRangeError):
                raise RequestError(400, "encounter.nurse_esi must be an integer 1-5")
        try:
            return TriageEncounter(
                id=str(raw.get("id", "adhoc")),
                age_months=age,
                chief_complaint=str(raw.get("chief_complaint", "")),
                vital_signs=str(raw.get("vital_signs", "")),
                physical_exam=str(raw.get("physical_exam", "")),
                pivot_assessment=(
                    str(raw["pivot_assessment"]) if raw.get("pivot_assessment") else None
                ),
                pmh=str(raw.get("pmh", "")),
                triage_note=str(raw.get("triage_note", "")),
                nurse_esi=nurse,
            )
        except ValueError as exc:
            raise RequestError(400, str(exc))

    def _parse_request(self, payload: dict) -> tuple[TriageEncounter, PipelineKind, Ablation, dict, str]:
        if not isinstance(payload, dict):
            raise RequestError(400, "request body must be a JSON object")
        unknown = set(payload) - _REQUEST_KEYS
        if unknown:
            raise RequestError(400, f"unknown request fields {sorted(unknown)}")
        if "encounter" not in payload:
            raise RequestError(400, "'encounter' is required")
        encounter = self._parse_encounter(payload["encounter"])
        try:
            pipeline = PipelineKind(payload.get("pipeline", PipelineKind.NOTE_TO_ESI.value))
        except ValueError:
            raise RequestError(400, f"unknown pipeline {payload.get('pipeline')!r}")
        try:
            ablation = Ablation(payload.get("ablation", Ablation.NONE.value))
        except ValueError:
            raise RequestError(400, f"unknown ablation {payload.get('ablation')!r}")
        strategy = payload.get("strategy") or {"kind": "plain"}
        if not isinstance(strategy, dict):
            raise RequestError(400, "'strategy' must be an object")
        unknown = set(strategy) - _STRATEGY_KEYS
        if unknown:
            raise RequestError(400, f"unknown strategy fields {sorted(unknown)}")
        if strategy.get("kind", "plain") not in ("plain", "ensemble", "rag"):
            raise RequestError(400, f"unknown strategy kind {strategy.get('kind')!r}")
        backend_name = payload.get("backend", self.config.default_backend)
        if backend_name not in self.backends:
            raise RequestError(400, f"unknown backend {backend_name!r}")
        return encounter, pipeline, ablation, strategy, backend_name

    def _strategy_options(
        self, strategy: dict, pipeline: PipelineKind
    ) -> tuple[EnsembleOptions | None, RagOptions | None]:
        kind = strategy.get("kind", "plain")
        if kind == "plain":
            return None, None
        if kind == "ensemble":
            n_agents = strategy.get("n_agents", 3)
            rounds = strategy.get("rounds", 1)
            if n_agents not in (3, 4) or rounds not in (1, 2):
                raise RequestError(400, "ensemble strategy needs n_agents in {3,4} and rounds in {1,2}")
            if pipeline not in VIGNETTE_PIPELINES:
                raise RequestError(
                    422, f"ensemble strategy requires a vignette pipeline, not {pipeline.value}"
                )
            return EnsembleOptions(n_agents=n_agents, rounds=rounds), None
        if self.rag_index is None:
            raise RequestError(422, "rag strategy requested but no corpus is configured")
        k = strategy.get("k", self.rag_k)
        if not isinstance(k, int) or k < 1:
            raise RequestError(400, "rag strategy k must be a positive integer")
        return None, RagOptions(index=self.rag_index, k=k)

    # -- handlers -----------------------------------------------------------

    def handle_predict(self, payload: dict) -> tuple[int, dict]:
        encounter, pipeline, ablation, strategy, backend_name = self._parse_request(payload)
        ensemble, rag = self._strategy_options(strategy, pipeline)
        return self._predict(encounter, pipeline, ablation, strategy, backend_name, ensemble, rag)

    def _predict(self, encounter, pipeline, ablation, strategy, backend_name, ensemble, rag):
        backend = self.backends[backend_name]
        try:
            record = run_pipeline(
                pipeline, encounter, backend, self.pack, ablation=ablation, rag=rag, ensemble=ensemble
            )
        except PipelineInputError as exc:
            return 400, {"error": str(exc)}
        except StageError as exc:
            status = 504 if isinstance(exc.cause, BackendTimeoutError) else 502
            return status, {"error": str(exc), "stage": exc.stage}
        except (BackendError, EmptyVignetteError) as exc:
            status = 504 if isinstance(exc, BackendTimeoutError) else 502
            return status, {"error": str(exc)}
        body = record_to_dict(record)
        body.pop("encounter_id")
        body.pop("nurse_esi")
        if body.get("rag") is not None:
            for row in body["rag"]:
                passage = self.rag_passages.get(row["passage_id"])
                if passage is not None:
                    row["text"] = passage.text
                    row["source_section"] = passage.source_section
        body["strategy"] = strategy.get("kind", "plain")
        body["prompt_pack_version"] = self.pack.version
        body["schema_version"] = SCHEMA_VERSION
        return 200, body

    def handle_whatif(self, payload: dict) -> tuple[int, dict]:
        if not isinstance(payload, dict):
            raise RequestError(400, "request body must be a JSON object")
        unknown = set(payload) - {"request", "ablations"}
        if unknown:
            raise RequestError(400, f"unknown request fields {sorted(unknown)}")
        inner = payload.get("request")
        if not isinstance(inner, dict):
            raise RequestError(400, "'request' object is required")
        ablations_raw = payload.get("ablations")
        if not isinstance(ablations_raw, list) or not ablations_raw:
            raise RequestError(400, "'ablations' must be a non-empty list")
        try:
            ablations = [Ablation(a) for a in ablations_raw]
        except ValueError:
            raise RequestError(400, f"unknown ablation in {ablations_raw!r}")
        if inner.get("ablation") not in (None, Ablation.NONE.value):
            raise RequestError(400, "the inner request must not fix an ablation; use 'ablations'")
        encounter, pipeline, _, strategy, backend_name = self._parse_request(inner)
        ensemble, rag = self._strategy_options(strategy, pipeline)

        def one(ablation: Ablation) -> dict:
            status, body = self._predict(
                encounter, pipeline, ablation, strategy, backend_name, ensemble, rag
            )
            if status == 200:
                return {"ablation": ablation.value, "response": body}
            return {"ablation": ablation.value, "error": {"status": status, **body}}

        # computed independently and returned in request order
        with ThreadPoolExecutor(max_workers=len(ablations)) as pool:
            results = list(pool.map(one, ablations))
        return 200, {"schema_version": SCHEMA_VERSION, "results": results}

    def pipelines_info(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "pipelines": [kind.value for kind in PipelineKind],
            "ablations": [a.value for a in Ablation],
            "strategies": ["plain", "ensemble", "rag"],
            "backends": sorted(self.backends),
            "default_backend": self.config.default_backend,
            "rag_available": self.rag_index is not None,
            "prompt_pack_version": self.pack.version,
        }


_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "application/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json; charset=utf-8",
    ".svg": "image/svg+xml",
    ".png": "image/png",
    ".ico": "image/x-icon",
}


class _Handler(BaseHTTPRequestHandler):
    service: TriageService = None  # set by make_server

    # default request logging includes only method, path, and status
    def log_message(self, format: str, *args) -> None:  # noqa: A002 - stdlib signature
        log.info("%s", format % args)

    def _send_json(self, status: int, body: dict) -> None:
        data = json.dumps(body, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        try:
            return json.loads(raw.decode("utf-8")) if raw else {}
        except (json.JSONDecodeError, UnicodeDecodeError):
            raise RequestError(400, "request body is not valid JSON")

    def do_GET(self) -> None:
        path = self.path.split("?", 1)[0]
        if path == "/v1/health":
            self._send_json(200, {"status": "ok"})
            return
        if path == "/v1/pipelines":
            self._send_json(200, self.service.pipelines_info())
            return
        self._serve_static(path)

    def do_POST(self) -> None:
        path = self.path.split("?", 1)[0]
        try:
            payload = self._read_body()
            if path == "/v1/predict":
                status, body = self.service.handle_predict(payload)
            elif path == "/v1/whatif":
                status, body = self.service.handle_whatif(payload)
            else:
                status, body = 404, {"error": f"no such endpoint: {path}"}
        except RequestError as exc:
            status, body = exc.status, {"error": str(exc)}
        self._send_json(status, body)

    def _serve_static(self, path: str) -> None:
        static_dir = self.service.config.static_dir
        if static_dir is None:
            self._send_json(404, {"error": f"no such endpoint: {path}"})
            return
        root = Path(static_dir).resolve()
        relative = path.lstrip("/") or "index.html"
        target = (root / relative).resolve()
        if not str(target).startswith(str(root)) or not target.is_file():
            self._send_json(404, {"error": f"not found: {path}"})
            return
        data = target.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", _CONTENT_TYPES.get(target.suffix, "application/octet-stream"))
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


def make_server(service: TriageService, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (_Handler,), {"service": service})
    return ThreadingHTTPServer((host, port), handler)


def serve(config: ServiceConfig, host: str = "127.0.0.1", port: int = 8787) -> None:
    server = make_server(TriageService(config), host, port)
    log.info("listening on %s:%d", host, server.server_address[1])
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()


class BackgroundServer:
    """Run the service on an ephemeral port inside a thread (tests/demos)."""

    def __init__(self, config: ServiceConfig):
        self.server = make_server(TriageService(config))
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}"

    def __enter__(self) -> "BackgroundServer":
        self.thread.start()
        return self

    def __exit__(self, *exc_info) -> None:
        self.server.shutdown()
        self.server.server_close()
        self.thread.join(timeout=5)
