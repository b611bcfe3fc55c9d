"""Naive retrieval-augmented prediction over a user-supplied handbook corpus.

Retrieval is deliberately lexical so that rankings are exact and
reproducible with no model dependency.  The score of passage ``p`` for
query ``q`` is

    score(q, p) = sum over distinct query terms t of  tf(t, p) * idf(t)
    idf(t)      = ln((1 + N) / (1 + df(t))) + 1

where ``tf`` is the raw term count in the passage, ``N`` the corpus size,
and ``df`` the number of passages containing the term.  Tokens are
lowercase alphanumeric runs.  Ties break toward the smaller passage_id.

Worked example on a two-passage corpus (N=2), query "stridor at rest":
"stridor" appears once in each passage (df=2, idf = ln(3/3)+1 = 1.0), so
both passages score 1.0 for that term and the lower passage_id ranks first.
"""
from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class DuplicateIdError(ValueError):
    pass


class EmptyCorpusError(ValueError):
    pass


class CorpusFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Passage:
    passage_id: int
    text: str
    source_section: str | None = None


@dataclass(frozen=True)
class RetrievedPassage:
    passage_id: int
    score: float


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class LexicalIndex:
    passages: tuple[Passage, ...]
    term_counts: tuple[Counter, ...]
    document_frequency: dict[str, int]

    @property
    def corpus_size(self) -> int:
        return len(self.passages)

    def idf(self, term: str) -> float:
        df = self.document_frequency.get(term, 0)
        return math.log((1 + self.corpus_size) / (1 + df)) + 1.0


def index_corpus(passages: Sequence[Passage]) -> LexicalIndex:
    """Build the deterministic lexical index; same corpus, same scores."""
    if not passages:
        raise EmptyCorpusError("cannot index an empty corpus")
    seen: set[int] = set()
    for p in passages:
        if p.passage_id in seen:
            raise DuplicateIdError(f"duplicate passage_id {p.passage_id}")
        seen.add(p.passage_id)
    term_counts = tuple(Counter(tokenize(p.text)) for p in passages)
    df: dict[str, int] = {}
    for counts in term_counts:
        for term in counts:
            df[term] = df.get(term, 0) + 1
    return LexicalIndex(passages=tuple(passages), term_counts=term_counts, document_frequency=df)


def retrieve(index: LexicalIndex, query: str, k: int) -> list[tuple[Passage, float]]:
    """Top-k passages by tf-idf relevance; ties break by ascending id; k
    beyond the corpus size returns everything."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    query_terms = set(tokenize(query))
    scored = []
    for passage, counts in zip(index.passages, index.term_counts):
        score = sum(counts[t] * index.idf(t) for t in query_terms if t in counts)
        scored.append((passage, score))
    scored.sort(key=lambda item: (-item[1], item[0].passage_id))
    return scored[:k]


def augment_prompt(base_prompt: str, passages: Sequence[Passage]) -> str:
    """Prepend retrieved passages as a delimited reference block; an empty
    passage list returns the base prompt unchanged."""
    if not passages:
        return base_prompt
    lines = ["Reference guidelines:"]
    for i, passage in enumerate(passages, start=1):
        label = f" ({passage.source_section})" if passage.source_section else ""
        lines.append(f"[{i}]{label} {passage.text}")
    return "\n".join(lines) + "\n---\n" + base_prompt


def load_corpus(path: str | Path) -> list[Passage]:
    """Load a corpus JSONL of {passage_id, text, source_section?}."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    passages = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if "passage_id" not in row or "text" not in row:
                raise CorpusFormatError(f"{path}:{lineno}: rows need 'passage_id' and 'text'")
            passages.append(
                Passage(
                    passage_id=int(row["passage_id"]),
                    text=str(row["text"]),
                    source_section=row.get("source_section"),
                )
            )
    return passages


@dataclass(frozen=True)
class RagOptions:
    """Retrieval configuration active for a run: the built index plus k."""

    index: LexicalIndex
    k: int = 3
