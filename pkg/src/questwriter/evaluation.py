"""Automatic metrics, bootstrap statistics, and human-judgment bookkeeping.

BLEU-4 here is sentence-level with clipped n-gram precisions, multi-reference
max-clipping, and a brevity penalty against the closest reference length;
``smooth=True`` replaces zero precisions with 1e-9. A pooled corpus-level
unsmoothed variant is also reported. Tokenization follows the default prompt
tokenizer (word runs and punctuation runs), case preserved.
"""

from __future__ import annotations

import csv
import json
import math
import random
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .corpus import canonical_json
from .linearize import GenerationTask
from .model import FactRef

__all__ = [
    "CRITERIA",
    "JudgmentRecord",
    "ReferenceSets",
    "ItemScore",
    "MetricReport",
    "bleu4",
    "corpus_bleu4",
    "reference_sets_for",
    "evaluate_nup",
    "bootstrap_ci",
    "likert_aggregate",
    "pairwise_winrates",
    "annotation_agreement",
    "load_judgments",
    "render_report_table",
]

CRITERIA = (
    "coherence",
    "nonviolation",
    "bio_usage",
    "quest_usage",
    "content_suggestion",
    "engagingness",
)

_SMOOTH_EPS = 1e-9
_TOKEN_RE = re.compile(r"\w+|[^\w\s]+")


def _tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _clip_stats(
    candidate: Sequence[str], references: Sequence[Sequence[str]], n: int
) -> tuple[int, int]:
    """(clipped matches, possible n-grams) for one order."""
    possible = max(len(candidate) - n + 1, 0)
    if possible == 0:
        return 0, 0
    counts = _ngram_counts(candidate, n)
    max_ref: Counter = Counter()
    for reference in references:
        max_ref |= _ngram_counts(reference, n)
    clipped = sum(min(count, max_ref[ngram]) for ngram, count in counts.items())
    return clipped, possible


def _closest_ref_length(candidate_len: int, references: Sequence[Sequence[str]]) -> int:
    return min((len(r) for r in references), key=lambda rl: (abs(rl - candidate_len), rl))


def bleu4(candidate: str, references: Sequence[str], smooth: bool = False) -> float:
    """Sentence BLEU-4 of a candidate against one or more references."""
    if not references:
        raise ValueError("references must be non-empty")
    cand = _tokens(candidate)
    if not cand:
        return 0.0
    refs = [_tokens(r) for r in references]
    precisions: list[float] = []
    for n in range(1, 5):
        clipped, possible = _clip_stats(cand, refs, n)
        precisions.append(clipped / possible if possible else 0.0)
    if not smooth and min(precisions) == 0.0:
        return 0.0
    if smooth:
        precisions = [p if p > 0.0 else _SMOOTH_EPS for p in precisions]
    geo_mean = math.exp(math.fsum(0.25 * math.log(p) for p in precisions))
    r = _closest_ref_length(len(cand), refs)
    bp = 1.0 if len(cand) > r else math.exp(1.0 - r / len(cand))
    return bp * geo_mean


def corpus_bleu4(pairs: Sequence[tuple[str, Sequence[str]]]) -> float:
    """Unsmoothed corpus BLEU-4 with pooled clipped counts and lengths."""
    matches = [0] * 4
    possibles = [0] * 4
    cand_len = 0
    ref_len = 0
    for candidate, references in pairs:
        if not references:
            raise ValueError("references must be non-empty")
        cand = _tokens(candidate)
        refs = [_tokens(r) for r in references]
        if cand:
            cand_len += len(cand)
            ref_len += _closest_ref_length(len(cand), refs)
        for n in range(1, 5):
            clipped, possible = _clip_stats(cand, refs, n)
            matches[n - 1] += clipped
            possibles[n - 1] += possible
    if cand_len == 0 or 0 in possibles or 0 in matches:
        return 0.0
    geo_mean = math.exp(
        math.fsum(0.25 * math.log(m / p) for m, p in zip(matches, possibles))
    )
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * geo_mean


# ---------------------------------------------------------------------------
# NUP evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReferenceSets:
    """Per-item reference texts: the gold utterance, Q statements, B statements."""

    gold: tuple[str, ...]
    quest: tuple[str, ...]
    bio: tuple[str, ...]


def reference_sets_for(task: GenerationTask) -> ReferenceSets:
    if task.gold_target is None:
        raise ValueError("task has no gold target")
    return ReferenceSets(
        gold=(task.gold_target.text,),
        quest=tuple(s.text for s in task.spec.quest_statements()),
        bio=tuple(s.text for s in task.spec.bio_statements()),
    )


@dataclass(frozen=True)
class ItemScore:
    id: str
    bleu_gold: float
    bleu_quest: float | None
    bleu_bio: float | None
    semantic: float | None = None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "id": self.id,
            "bleu_gold": self.bleu_gold,
            "bleu_quest": self.bleu_quest,
            "bleu_bio": self.bleu_bio,
        }
        if self.semantic is not None:
            out["semantic"] = self.semantic
        return out


@dataclass(frozen=True)
class MetricReport:
    items: tuple[ItemScore, ...]
    corpus: dict[str, dict[str, float]]
    corpus_bleu_unsmoothed: dict[str, float]
    n: int
    scorer_errors: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "n": self.n,
            "items": [item.to_dict() for item in self.items],
            "corpus": self.corpus,
            "corpus_bleu_unsmoothed": self.corpus_bleu_unsmoothed,
        }
        if self.scorer_errors:
            out["scorer_errors"] = list(self.scorer_errors)
        return out

    def to_json(self) -> str:
        return canonical_json(self.to_dict())


def evaluate_nup(
    results: Sequence[tuple[GenerationTask, str]],
    external_scorer: Callable[[str, Sequence[str]], float] | None = None,
    resamples: int = 1000,
    level: float = 0.95,
    seed: int = 0,
) -> MetricReport:
    """Score candidates against gold / quest / bio reference sets.

    Per-item scores use smoothed sentence BLEU; corpus rows carry the mean
    with a seeded percentile-bootstrap interval, plus pooled unsmoothed
    corpus BLEU. The optional external scorer is called per item with the
    gold reference list; its failures are recorded and skipped.
    """
    items: list[ItemScore] = []
    errors: list[str] = []
    pooled: dict[str, list[tuple[str, tuple[str, ...]]]] = {"gold": [], "quest": [], "bio": []}
    for position, (task, candidate) in enumerate(results):
        refs = reference_sets_for(task)
        target_id = task.gold_target.id if task.gold_target else "?"
        item_id = f"{position:04d}:{task.spec.name}:{target_id}"
        semantic = None
        if external_scorer is not None:
            try:
                semantic = float(external_scorer(candidate, refs.gold))
            except Exception as exc:
                errors.append(f"{item_id}: {exc}")
        scores: dict[str, float | None] = {}
        for column, texts in (("gold", refs.gold), ("quest", refs.quest), ("bio", refs.bio)):
            if texts:
                scores[column] = bleu4(candidate, texts, smooth=True)
                pooled[column].append((candidate, texts))
            else:
                scores[column] = None
        items.append(
            ItemScore(
                id=item_id,
                bleu_gold=scores["gold"],
                bleu_quest=scores["quest"],
                bleu_bio=scores["bio"],
                semantic=semantic,
            )
        )

    corpus: dict[str, dict[str, float]] = {}
    columns: dict[str, list[float]] = {
        "bleu_gold": [i.bleu_gold for i in items if i.bleu_gold is not None],
        "bleu_quest": [i.bleu_quest for i in items if i.bleu_quest is not None],
        "bleu_bio": [i.bleu_bio for i in items if i.bleu_bio is not None],
    }
    semantic_scores = [i.semantic for i in items if i.semantic is not None]
    if semantic_scores:
        columns["semantic"] = semantic_scores
    for column, scores_list in columns.items():
        if scores_list:
            mean, lo, hi = bootstrap_ci(scores_list, resamples, level, seed)
            corpus[column] = {"mean": mean, "lo": lo, "hi": hi}
    unsmoothed = {
        column: corpus_bleu4(pairs) for column, pairs in pooled.items() if pairs
    }
    return MetricReport(
        items=tuple(items),
        corpus=corpus,
        corpus_bleu_unsmoothed=unsmoothed,
        n=len(items),
        scorer_errors=tuple(errors),
    )


# ---------------------------------------------------------------------------
# bootstrap and judgments
# ---------------------------------------------------------------------------


def bootstrap_ci(
    scores: Sequence[float], resamples: int = 1000, level: float = 0.95, seed: int = 0
) -> tuple[float, float, float]:
    """Percentile bootstrap of the mean: (mean, lo, hi).

    Protocol, exactly: rng = random.Random(seed); each resample draws
    len(scores) values via scores[rng.randrange(n)] and takes their mean;
    the sorted means are indexed at floor(alpha/2 * (R-1)) and
    ceil((1 - alpha/2) * (R-1)) with alpha = 1 - level.
    """
    if not scores:
        raise ValueError("scores must be non-empty")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie strictly between 0 and 1")
    n = len(scores)
    mean = math.fsum(scores) / n
    rng = random.Random(seed)
    means = sorted(
        math.fsum(scores[rng.randrange(n)] for _ in range(n)) / n for _ in range(resamples)
    )
    alpha = 1.0 - level
    lo = means[int(math.floor(alpha / 2 * (resamples - 1)))]
    hi = means[int(math.ceil((1.0 - alpha / 2) * (resamples - 1)))]
    return mean, lo, hi


@dataclass(frozen=True)
class JudgmentRecord:
    """One human judgment: a 1..4 Likert score or a pairwise preference."""

    item_id: str
    criterion: str
    score: int | None = None
    system_a: str | None = None
    system_b: str | None = None
    winner: str | None = None

    def __post_init__(self) -> None:
        if self.criterion not in CRITERIA:
            raise ValueError(f"unknown criterion {self.criterion!r}")
        if self.score is not None:
            if not 1 <= self.score <= 4:
                raise ValueError(f"Likert score {self.score} outside 1..4")
            if self.winner is not None:
                raise ValueError("record cannot be both Likert and pairwise")
        else:
            if self.winner not in ("a", "b", "tie"):
                raise ValueError(f"pairwise winner must be a/b/tie, got {self.winner!r}")
            if not self.system_a or not self.system_b:
                raise ValueError("pairwise record must name both systems")

    @property
    def is_likert(self) -> bool:
        return self.score is not None


def likert_aggregate(
    records: Sequence[JudgmentRecord],
    resamples: int = 1000,
    level: float = 0.95,
    seed: int = 0,
) -> dict[str, dict[str, float]]:
    """Per-criterion mean and bootstrap CI over Likert records."""
    if any(not r.is_likert for r in records):
        raise ValueError("mixed record kinds: expected Likert records only")
    by_criterion: dict[str, list[float]] = {}
    for record in records:
        by_criterion.setdefault(record.criterion, []).append(float(record.score))
    out: dict[str, dict[str, float]] = {}
    for criterion in sorted(by_criterion):
        mean, lo, hi = bootstrap_ci(by_criterion[criterion], resamples, level, seed)
        out[criterion] = {"mean": mean, "lo": lo, "hi": hi, "n": len(by_criterion[criterion])}
    return out


def pairwise_winrates(records: Sequence[JudgmentRecord]) -> dict[str, dict[str, float]]:
    """Percent head-to-head wins per system and criterion, one decimal.

    Ties are excluded from the denominator; cells with zero comparisons are
    absent rather than zero.
    """
    if any(r.is_likert for r in records):
        raise ValueError("mixed record kinds: expected pairwise records only")
    wins: dict[tuple[str, str], int] = {}
    comparisons: dict[tuple[str, str], int] = {}
    for record in records:
        if record.winner == "tie":
            continue
        for system in (record.system_a, record.system_b):
            key = (system, record.criterion)
            comparisons[key] = comparisons.get(key, 0) + 1
        winner = record.system_a if record.winner == "a" else record.system_b
        wins[(winner, record.criterion)] = wins.get((winner, record.criterion), 0) + 1
    table: dict[str, dict[str, float]] = {}
    for (system, criterion), total in sorted(comparisons.items()):
        percent = round(wins.get((system, criterion), 0) / total * 100, 1)
        table.setdefault(system, {})[criterion] = percent
    return table


def annotation_agreement(
    a: Mapping[str, set[FactRef] | frozenset[FactRef]],
    b: Mapping[str, set[FactRef] | frozenset[FactRef]],
) -> dict[str, float]:
    """Average exact-match and Jaccard overlap between two annotation maps.

    Empty-vs-empty counts as agreement (EM 1, Jaccard 1). The maps must
    cover the same node ids.
    """
    if set(a) != set(b):
        raise KeyError("annotation maps cover different node sets")
    if not a:
        raise ValueError("annotation maps are empty")
    em_total = 0.0
    jaccard_total = 0.0
    for node_id in a:
        left, right = set(a[node_id]), set(b[node_id])
        em_total += 1.0 if left == right else 0.0
        if not left and not right:
            jaccard_total += 1.0
        else:
            jaccard_total += len(left & right) / len(left | right)
    n = len(a)
    return {"em_avg": em_total / n, "jaccard_avg": jaccard_total / n}


# ---------------------------------------------------------------------------
# record ingestion and table rendering
# ---------------------------------------------------------------------------


def _record_from_mapping(row: Mapping[str, Any]) -> JudgmentRecord:
    score = row.get("score")
    return JudgmentRecord(
        item_id=str(row.get("item", row.get("item_id", ""))),
        criterion=str(row["criterion"]),
        score=int(score) if score not in (None, "") else None,
        system_a=row.get("system_a") or None,
        system_b=row.get("system_b") or None,
        winner=row.get("winner") or None,
    )


def load_judgments(path: str | Path) -> list[JudgmentRecord]:
    """Read judgment records from a JSON list or a CSV with matching headers."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with path.open(newline="", encoding="utf-8") as handle:
            return [_record_from_mapping(row) for row in csv.DictReader(handle)]
    payload = json.loads(path.read_text(encoding="utf-8"))
    return [_record_from_mapping(row) for row in payload]


def render_report_table(report: MetricReport) -> str:
    """Aligned plain-text view of the corpus-level rows."""
    headers = ("metric", "mean", "ci_lo", "ci_hi")
    rows = [
        (name, f"{cell['mean']:.4f}", f"{cell['lo']:.4f}", f"{cell['hi']:.4f}")
        for name, cell in sorted(report.corpus.items())
    ]
    rows.extend(
        (f"corpus_{name}_unsmoothed", f"{value:.4f}", "", "")
        for name, value in sorted(report.corpus_bleu_unsmoothed.items())
    )
    widths = [max(len(r[i]) for r in [headers, *rows]) for i in range(4)]
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers))]
    lines.extend("  ".join(r[i].ljust(widths[i]) for i in range(4)).rstrip() for r in rows)
    return "\n".join([*lines, f"items: {report.n}"])
