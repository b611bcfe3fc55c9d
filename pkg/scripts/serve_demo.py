#!/usr/bin/env python3
"""Start the prediction service with the deterministic heuristic backend,
the bundled handbook stand-in corpus, and the console's static assets when
they have been built (frontend/dist).

Usage:
    python scripts/serve_demo.py [--port 8787]
"""
from __future__ import annotations

import argparse
import logging
from importlib import resources
from pathlib import Path

from esitriage.backend import HeuristicSpec
from esitriage.service import ServiceConfig, serve


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8787)
    parser.add_argument("--no-rag", action="store_true", help="disable the retrieval corpus")
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO, format="%(name)s %(message)s")

    static_dir = Path(__file__).resolve().parent.parent / "frontend" / "dist"
    corpus = str(resources.files("esitriage.data").joinpath("handbook_passages.jsonl"))
    config = ServiceConfig(
        backends={"demo": HeuristicSpec(seed=0)},
        default_backend="demo",
        rag_corpus_path=None if args.no_rag else corpus,
        rag_k=3,
        static_dir=str(static_dir) if static_dir.is_dir() else None,
    )
    if config.static_dir:
        print(f"serving console from {config.static_dir}")
    else:
        print("console assets not built (run `npm run build` in frontend/); API only")
    print(f"http://{args.host}:{args.port}/v1/health")
    serve(config, host=args.host, port=args.port)


if __name__ == "__main__":
    main()
