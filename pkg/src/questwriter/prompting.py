"""Prompt construction: section rendering, token budgets, and serializations.

Completion-style text only. The templates are bit-exact and shared between
task blocks and few-shot exemplars:

    FACTS:
    <entity>
       <statement>            (three-space indent)
    DIALOG CONTEXT:
    <in-objective log line>
       <walkthrough line>     (three-space indent)
    KNOW BY THE END OF THE DIALOG:
    <out-objective log line>
    DIALOG PARTICIPANTS:
    <name>, <name>
    DIALOG:
    > <speaker>: <text>

Sections are separated by one blank line; empty FACTS / CONTEXT / KNOW
sections are omitted. In knowledge-selection modes the DIALOG section uses
blank-line-separated blocks of "<label> fact: <text>" lines followed by
"utterance: > <speaker>: <text>". Few-shot exemplars are joined with a
three-hyphen separator line; the prompt ends with a newline after the last
history line so a completion naturally continues the dialogue.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from .corpus import Corpus
from .linearize import GenerationTask, History, longest_history
from .model import (
    DialogueSpec,
    DialogueTree,
    FactRef,
    UtteranceNode,
    resolve_fact,
    source_label,
)
from .retrieval import BM25Index, build_index, retrieve_exemplars

__all__ = [
    "MODES",
    "KS_MODES",
    "PromptConfig",
    "Prompt",
    "Exemplar",
    "PromptOverflowError",
    "count_tokens",
    "register_tokenizer",
    "render_dialogue_block",
    "build_ks_history",
    "fact_line",
    "resolve_statement_text",
    "select_oracle_facts",
    "sample_one_fact",
    "build_exemplar_pool",
    "build_icl_prompt",
    "build_sl_source",
    "build_sl_target",
    "parse_sl_target",
]

SECTION_FACTS = "FACTS:"
SECTION_CONTEXT = "DIALOG CONTEXT:"
SECTION_KNOW = "KNOW BY THE END OF THE DIALOG:"
SECTION_PARTICIPANTS = "DIALOG PARTICIPANTS:"
SECTION_DIALOG = "DIALOG:"
STATEMENT_INDENT = "   "
UTTERANCE_PREFIX = "> "
KS_UTTERANCE_PREFIX = "utterance: "
EXEMPLAR_SEPARATOR = "---"
DEFAULT_SL_SEPARATOR = "</s>"

MODES = ("vanilla", "quest_only", "full", "ks", "ks_one_fact", "ks_oracle")
KS_MODES = frozenset({"ks", "ks_one_fact", "ks_oracle"})

DEFAULT_ICL_BUDGET = 4000
DEFAULT_SL_WINDOW = 1024


class PromptOverflowError(ValueError):
    """Raised when a task block cannot fit the budget even after trimming."""


@dataclass(frozen=True)
class PromptConfig:
    mode: str = "full"
    token_budget: int = DEFAULT_ICL_BUDGET
    tokenizer_id: str = "heuristic"
    allow_few_shot: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown prompt mode {self.mode!r}")
        if self.token_budget <= 0:
            raise ValueError("token_budget must be positive")


@dataclass(frozen=True)
class Prompt:
    text: str
    token_count: int
    num_exemplars: int = 0
    truncated: bool = False
    partial_leading_exemplar: bool = False


# ---------------------------------------------------------------------------
# token counting
# ---------------------------------------------------------------------------

_HEURISTIC_RE = re.compile(r"\w+|[^\w\s]+")


def _heuristic_count(text: str) -> int:
    return len(_HEURISTIC_RE.findall(text))


_TOKENIZERS: dict[str, Callable[[str], int]] = {"heuristic": _heuristic_count}


def register_tokenizer(tokenizer_id: str, counter: Callable[[str], int]) -> None:
    _TOKENIZERS[tokenizer_id] = counter


def count_tokens(text: str, tokenizer_id: str = "heuristic") -> int:
    """Token count under a registered tokenizer.

    The default splits non-whitespace runs further at boundaries between
    word characters and punctuation, so "don't stop!" counts five tokens.
    """
    if tokenizer_id not in _TOKENIZERS:
        raise KeyError(f"unknown tokenizer {tokenizer_id!r}")
    return _TOKENIZERS[tokenizer_id](text)


# ---------------------------------------------------------------------------
# block rendering
# ---------------------------------------------------------------------------


@dataclass
class _BlockView:
    """Mutable rendering state so budget trimming can drop pieces."""

    fact_passages: list[tuple[str, list[str]]]
    context_lines: list[str]
    know_lines: list[str]
    participants: list[str]
    dialog_body: str


def _ordered_passages(spec: DialogueSpec) -> list[tuple[str, list[str]]]:
    """Bios with participants last, so they are dropped last under pressure."""
    names = set(spec.participant_names)
    ordered = [b for b in spec.bios if b.entity_name not in names]
    ordered += [b for b in spec.bios if b.entity_name in names]
    return [(b.entity_name, [s.text for s in b.statements]) for b in ordered]


def _context_lines(spec: DialogueSpec) -> list[str]:
    lines: list[str] = []
    for objective in spec.in_objectives:
        lines.extend(s.text for s in objective.game_log)
        lines.extend(STATEMENT_INDENT + s.text for s in objective.walkthrough)
    return lines


def _know_lines(spec: DialogueSpec) -> list[str]:
    return [s.text for o in spec.out_objectives for s in o.game_log]


def fact_line(spec: DialogueSpec, ref: FactRef) -> str:
    statement = resolve_fact(spec, ref)
    return f"{source_label(ref.source)} fact: {statement.text}"


def build_ks_history(
    spec: DialogueSpec,
    history: Sequence[UtteranceNode],
    annotations: Mapping[str, Sequence[FactRef]] | None = None,
) -> str:
    """Knowledge-selection rendering of a history.

    Each utterance becomes one block: a "<label> fact: <text>" line per
    annotated support fact (none for unannotated nodes), then the utterance
    line. Blocks are separated by blank lines. Unresolvable references
    raise.
    """
    blocks: list[str] = []
    for node in history:
        refs = annotations[node.id] if annotations is not None else node.support_facts
        lines = [fact_line(spec, ref) for ref in (refs or ())]
        lines.append(f"{KS_UTTERANCE_PREFIX}{UTTERANCE_PREFIX}{node.speaker}: {node.text}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


def _dialog_body(
    spec: DialogueSpec,
    history: Sequence[UtteranceNode],
    mode: str,
    annotations: Mapping[str, Sequence[FactRef]] | None,
    pending_fact_lines: Sequence[str],
) -> str:
    if mode in KS_MODES:
        body = build_ks_history(spec, history, annotations)
    else:
        body = "\n".join(f"{UTTERANCE_PREFIX}{n.speaker}: {n.text}" for n in history)
    if pending_fact_lines:
        pending = "\n".join(pending_fact_lines)
        body = f"{body}\n\n{pending}" if body else pending
    return body


def _make_view(
    spec: DialogueSpec,
    history: Sequence[UtteranceNode],
    mode: str,
    annotations: Mapping[str, Sequence[FactRef]] | None = None,
    pending_fact_lines: Sequence[str] = (),
) -> _BlockView:
    return _BlockView(
        fact_passages=_ordered_passages(spec) if mode in ("full", *KS_MODES) else [],
        context_lines=_context_lines(spec) if mode != "vanilla" else [],
        know_lines=_know_lines(spec) if mode != "vanilla" else [],
        participants=list(spec.participant_names),
        dialog_body=_dialog_body(spec, history, mode, annotations, pending_fact_lines),
    )


def _render_view(view: _BlockView) -> str:
    sections: list[str] = []
    if view.fact_passages:
        lines = [SECTION_FACTS]
        for entity, texts in view.fact_passages:
            lines.append(entity)
            lines.extend(STATEMENT_INDENT + t for t in texts)
        sections.append("\n".join(lines))
    if view.context_lines:
        sections.append("\n".join([SECTION_CONTEXT, *view.context_lines]))
    if view.know_lines:
        sections.append("\n".join([SECTION_KNOW, *view.know_lines]))
    sections.append(f"{SECTION_PARTICIPANTS}\n{', '.join(view.participants)}")
    dialog = SECTION_DIALOG if not view.dialog_body else f"{SECTION_DIALOG}\n{view.dialog_body}"
    sections.append(dialog)
    return "\n\n".join(sections)


def render_dialogue_block(
    spec: DialogueSpec,
    history: Sequence[UtteranceNode],
    mode: str,
    annotations: Mapping[str, Sequence[FactRef]] | None = None,
) -> str:
    """Render one dialogue block in the given mode, without budget trimming.

    The returned text carries no trailing newline; it ends right after the
    last history line so a completion continues with "> ".
    """
    if mode not in MODES:
        raise ValueError(f"unknown prompt mode {mode!r}")
    return _render_view(_make_view(spec, history, mode, annotations))


# ---------------------------------------------------------------------------
# knowledge-selection fact pickers
# ---------------------------------------------------------------------------


def select_oracle_facts(task: GenerationTask) -> list[FactRef]:
    """The gold annotation list for the target utterance, verbatim."""
    if task.gold_facts is None:
        raise ValueError("no gold facts on this task")
    return list(task.gold_facts)


def sample_one_fact(task: GenerationTask, seed: int) -> FactRef:
    """One uniformly seeded choice among the gold facts."""
    if not task.gold_facts:
        raise ValueError("no gold facts on this task")
    rng = random.Random(seed)
    return task.gold_facts[rng.randrange(len(task.gold_facts))]


# ---------------------------------------------------------------------------
# few-shot assembly
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Exemplar:
    """A training dialogue prepared for few-shot use."""

    id: str
    spec: DialogueSpec
    tree: DialogueTree
    history: History


def build_exemplar_pool(
    corpus: Corpus, split: str | None = "train"
) -> tuple[BM25Index, list[Exemplar]]:
    """Index + exemplar list over a corpus split (or the whole corpus).

    Each exemplar is the maximal linearization of its gold tree; the BM25
    document is that linearized utterance text.
    """
    if split is not None:
        dialogues = corpus.dialogues_for_split(split)
    else:
        dialogues = corpus.dialogues
    exemplars: list[Exemplar] = []
    docs: list[tuple[str, str]] = []
    for spec, tree in dialogues:
        history = longest_history(tree)
        nodes = [tree.nodes[i] for i in history.node_ids]
        docs.append((spec.name, "\n".join(f"{UTTERANCE_PREFIX}{n.speaker}: {n.text}" for n in nodes)))
        exemplars.append(Exemplar(spec.name, spec, tree, history))
    return build_index(docs), exemplars


def _render_exemplar(exemplar: Exemplar, mode: str) -> str:
    nodes = [exemplar.tree.nodes[i] for i in exemplar.history.node_ids]
    return render_dialogue_block(exemplar.spec, nodes, mode)


def _target_fact_lines(task: GenerationTask, config: PromptConfig) -> list[str]:
    if config.mode == "ks_oracle":
        return [fact_line(task.spec, ref) for ref in select_oracle_facts(task)]
    if config.mode == "ks_one_fact":
        return [fact_line(task.spec, sample_one_fact(task, config.seed))]
    return []


def _trim_to_budget(view: _BlockView, budget: int, tokenizer_id: str) -> tuple[str, bool]:
    """Drop whole bio passages, then trailing quest lines, until the block fits."""
    trimmed = False
    text = _render_view(view)
    while count_tokens(text, tokenizer_id) > budget:
        if view.fact_passages:
            view.fact_passages.pop(0)
        elif view.context_lines:
            view.context_lines.pop()
        elif view.know_lines:
            view.know_lines.pop()
        else:
            raise PromptOverflowError(
                f"irreducible overflow: task block needs {count_tokens(text, tokenizer_id)} "
                f"tokens against a budget of {budget}"
            )
        trimmed = True
        text = _render_view(view)
    return text, trimmed


_PART_JOINER = "\n\n" + EXEMPLAR_SEPARATOR + "\n\n"


def _assemble(parts: Sequence[str]) -> str:
    return _PART_JOINER.join(parts) + "\n"


def build_icl_prompt(
    task: GenerationTask,
    config: PromptConfig,
    index: BM25Index | None = None,
    pool: Sequence[Exemplar] = (),
) -> Prompt:
    """Budgeted in-context prompt: ranked exemplars above the task block.

    The task block renders first and is trimmed (whole biography passages,
    non-participants first, then trailing quest lines) if it alone exceeds
    the budget. Whole exemplars are then prepended in retrieval rank order
    while they fit; the first exemplar that does not fit whole is
    left-truncated to whole lines to fill the remaining budget. An exemplar
    with the same id as the task's dialogue is never used.
    """
    annotations = None
    pending = _target_fact_lines(task, config)
    view = _make_view(task.spec, task.history_nodes, config.mode, annotations, pending)
    task_block, truncated = _trim_to_budget(view, config.token_budget, config.tokenizer_id)

    parts: list[str] = [task_block]
    num_exemplars = 0
    partial_leading = False

    if config.allow_few_shot and index is not None and index.size > 0 and pool:
        by_id = {e.id: e for e in pool}
        ranked = [
            doc_id
            for doc_id, _ in retrieve_exemplars(index, task.spec, index.size)
            if doc_id != task.spec.name and doc_id in by_id
        ]
        budget = config.token_budget
        for doc_id in ranked:
            block = _render_exemplar(by_id[doc_id], config.mode)
            candidate = [block, *parts]
            if count_tokens(_assemble(candidate), config.tokenizer_id) <= budget:
                parts = candidate
                num_exemplars += 1
                continue
            # left-truncate this exemplar to whole lines; keep the largest
            # suffix that fits (token counts grow with added lines)
            lines = block.split("\n")
            def fits(keep: int) -> bool:
                tail = "\n".join(lines[len(lines) - keep :])
                return count_tokens(_assemble([tail, *parts]), config.tokenizer_id) <= budget
            low, high = 0, len(lines)
            while low < high:
                mid = (low + high + 1) // 2
                if fits(mid):
                    low = mid
                else:
                    high = mid - 1
            if low > 0:
                parts = ["\n".join(lines[len(lines) - low :]), *parts]
                num_exemplars += 1
                partial_leading = True
            break

    text = _assemble(parts)
    token_count = count_tokens(text, config.tokenizer_id)
    if token_count > config.token_budget:
        raise PromptOverflowError("assembled prompt exceeds budget")
    return Prompt(
        text=text,
        token_count=token_count,
        num_exemplars=num_exemplars,
        truncated=truncated,
        partial_leading_exemplar=partial_leading,
    )


# ---------------------------------------------------------------------------
# supervised-learning serialization
# ---------------------------------------------------------------------------


def _history_segment(task: GenerationTask) -> str:
    utterances = " ".join(
        f"{UTTERANCE_PREFIX}{n.speaker}: {n.text}" for n in task.history_nodes
    )
    return f"HISTORY:{utterances}"


def _sl_segments(task: GenerationTask) -> tuple[list[list[str]], list[str]]:
    """(per-bio segment groups, fixed tail segments) for the SL source."""
    spec = task.spec
    bio_groups = [[entity, *texts] for entity, texts in _ordered_passages(spec)]
    tail: list[str] = []
    context = _context_lines(spec)
    context = [line.strip() for line in context]
    if context:
        tail.append(f"{SECTION_CONTEXT} {context[0]}")
        tail.extend(context[1:])
    know = _know_lines(spec)
    if know:
        tail.append(f"{SECTION_KNOW} {know[0]}")
        tail.extend(know[1:])
    tail.append(SECTION_PARTICIPANTS)
    tail.extend(spec.participant_names)
    tail.append(_history_segment(task))
    return bio_groups, tail


def _join_segments(segments: Sequence[str], separator: str) -> str:
    return f"{separator} ".join(segments) + separator


def build_sl_source(
    task: GenerationTask,
    window: int = DEFAULT_SL_WINDOW,
    tokenizer_id: str = "heuristic",
    separator: str = DEFAULT_SL_SEPARATOR,
) -> str:
    """Flat [B, Q, P, H] serialization fit to a token window.

    Statements are joined by the separator sentinel. Over the window, whole
    biography passages are dropped first (non-participant passages before
    participant ones), then leading segments, then leading history
    utterances.
    """
    bio_groups, tail = _sl_segments(task)
    while True:
        segments = [s for group in bio_groups for s in group] + tail
        text = _join_segments(segments, separator)
        if count_tokens(text, tokenizer_id) <= window or not bio_groups:
            break
        bio_groups.pop(0)
    while count_tokens(text, tokenizer_id) > window and len(tail) > 1:
        tail.pop(0)
        text = _join_segments(tail, separator)
    while count_tokens(text, tokenizer_id) > window and " " in text:
        text = text.split(" ", 1)[1]
    return text


def build_sl_target(
    task: GenerationTask,
    ks: bool = False,
    separator: str = DEFAULT_SL_SEPARATOR,
) -> str:
    """Gold utterance line, with "<label> fact: <text>" items first when ks."""
    if task.gold_target is None:
        raise ValueError("task has no gold target")
    gold = task.gold_target
    utterance = f"{UTTERANCE_PREFIX}{gold.speaker}: {gold.text}"
    if ks and task.gold_facts:
        items = ", ".join(fact_line(task.spec, ref) for ref in task.gold_facts)
        return f"{items} {utterance}{separator}"
    return f"{utterance}{separator}"


def _normalize(text: str) -> str:
    return " ".join(text.split()).casefold()


def resolve_statement_text(spec: DialogueSpec, text: str) -> FactRef | None:
    """Match a statement text against Q union B: exact, then normalized."""
    for statement in spec.all_statements():
        if statement.text == text:
            return FactRef(statement.source, statement.index)
    wanted = _normalize(text)
    for statement in spec.all_statements():
        if _normalize(statement.text) == wanted:
            return FactRef(statement.source, statement.index)
    return None


_FACT_ITEM_RE = re.compile(r"^(?P<label>.+?) fact: (?P<text>.+)$", re.DOTALL)


def parse_sl_target(
    raw: str,
    spec: DialogueSpec,
    separator: str = DEFAULT_SL_SEPARATOR,
) -> tuple[list[FactRef | str], str]:
    """Inverse of ``build_sl_target``: (fact items, utterance line).

    Fact items split on ", " are re-merged greedily until their text
    resolves against the spec, so commas inside statement texts survive.
    Items that never resolve are kept as raw strings.
    """
    text = raw.strip()
    if text.endswith(separator):
        text = text[: -len(separator)]
    start = 0 if text.startswith(UTTERANCE_PREFIX) else text.find(f" {UTTERANCE_PREFIX}")
    if start < 0:
        return [], text
    if start == 0:
        return [], text
    facts_region, utterance = text[:start].rstrip(", "), text[start + 1 :]
    pieces = facts_region.split(", ")
    resolved: list[FactRef | str] = []
    buffer = ""
    for piece in pieces:
        buffer = f"{buffer}, {piece}" if buffer else piece
        match = _FACT_ITEM_RE.match(buffer)
        if not match:
            continue
        ref = resolve_statement_text(spec, match.group("text"))
        if ref is not None:
            resolved.append(ref)
            buffer = ""
    if buffer:
        resolved.append(buffer)
    return resolved, utterance
