"""Okapi-BM25 index over training dialogues for few-shot exemplar selection.

Tokenization is lowercase with splits on non-alphanumeric runs. The idf uses
the non-negative ln(1 + (N - df + 0.5) / (df + 0.5)) variant so scores stay
well-behaved on tiny corpora. Defaults k1=1.2, b=0.75.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field

from .model import DialogueSpec

__all__ = ["BM25Index", "build_index", "bm25_score", "retrieve_exemplars", "spec_query_text", "tokenize"]

_TOKEN_RE = re.compile(r"[a-z0-9]+")

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class BM25Index:
    term_counts: dict[str, Counter]
    doc_lengths: dict[str, int]
    avg_doc_length: float
    doc_freq: dict[str, int]
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B

    @property
    def size(self) -> int:
        return len(self.term_counts)

    def doc_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self.term_counts))


def build_index(
    docs: list[tuple[str, str]],
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> BM25Index:
    if k1 < 0:
        raise ValueError("k1 must be non-negative")
    if not 0 <= b <= 1:
        raise ValueError("b must lie in [0, 1]")
    term_counts: dict[str, Counter] = {}
    doc_lengths: dict[str, int] = {}
    doc_freq: dict[str, int] = {}
    for doc_id, text in docs:
        if doc_id in term_counts:
            raise ValueError(f"duplicate document id {doc_id!r}")
        tokens = tokenize(text)
        counts = Counter(tokens)
        term_counts[doc_id] = counts
        doc_lengths[doc_id] = len(tokens)
        for term in counts:
            doc_freq[term] = doc_freq.get(term, 0) + 1
    total = sum(doc_lengths.values())
    avg = total / len(doc_lengths) if doc_lengths else 0.0
    return BM25Index(term_counts, doc_lengths, avg, doc_freq, k1, b)


def bm25_score(index: BM25Index, query: str, doc_id: str) -> float:
    """Okapi score of one document against the query token sequence.

    Repeated query tokens contribute once per occurrence. Terms absent from
    the document contribute zero.
    """
    if doc_id not in index.term_counts:
        raise KeyError(f"unknown document id {doc_id!r}")
    counts = index.term_counts[doc_id]
    length = index.doc_lengths[doc_id]
    n_docs = index.size
    score = 0.0
    for term in tokenize(query):
        tf = counts.get(term, 0)
        if tf == 0:
            continue
        df = index.doc_freq.get(term, 0)
        idf = math.log(1.0 + (n_docs - df + 0.5) / (df + 0.5))
        norm = index.k1 * (1.0 - index.b + index.b * length / index.avg_doc_length)
        score += idf * tf * (index.k1 + 1.0) / (tf + norm)
    return score


def spec_query_text(spec: DialogueSpec) -> str:
    """Query string for exemplar retrieval: B statements, Q statements, names."""
    parts = [s.text for s in spec.bio_statements()]
    parts.extend(s.text for s in spec.quest_statements())
    parts.extend(spec.participant_names)
    return " ".join(parts)


def retrieve_exemplars(index: BM25Index, spec: DialogueSpec, k: int) -> list[tuple[str, float]]:
    """Top-k documents for the spec's query, score-descending, ties by id."""
    if k < 0:
        raise ValueError("k must be non-negative")
    query = spec_query_text(spec)
    scored = [(doc_id, bm25_score(index, query, doc_id)) for doc_id in index.doc_ids()]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[:k]
