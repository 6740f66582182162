"""The dialogue writer: drives an LM backend to propose utterance nodes.

Backends implement ``complete(prompt, params) -> text`` for a plain
completions endpoint. The mock backend synthesizes deterministic,
well-formed continuations straight from the prompt text, which keeps the
whole pipeline reproducible byte-for-byte; the HTTP backend targets any
OpenAI-compatible completions API.
"""

from __future__ import annotations

import os
import random
import re
import time
from dataclasses import dataclass, replace
from typing import Callable, Protocol, Sequence

import httpx

from .linearize import GenerationTask, linearize
from .model import (
    DialogueSpec,
    DialogueTree,
    Edge,
    FactRef,
    ORIGIN_COMMITTED,
    ORIGIN_UNCOMMITTED,
    UtteranceNode,
)
from .prompting import (
    Exemplar,
    Prompt,
    PromptConfig,
    build_icl_prompt,
    resolve_statement_text,
)
from .retrieval import BM25Index

__all__ = [
    "CompletionParams",
    "LMBackend",
    "MockBackend",
    "HTTPBackend",
    "BackendError",
    "CompletionParseError",
    "Candidate",
    "SpineResult",
    "CommitPolicy",
    "SeededRandomPolicy",
    "ExternalChoicePolicy",
    "default_expected_speaker",
    "parse_completion",
    "generate_candidates",
    "generate_spine",
]


class BackendError(RuntimeError):
    """A completion backend failed after its retry allowance."""


class CompletionParseError(ValueError):
    """A completion could not be parsed into a candidate utterance."""


@dataclass(frozen=True)
class CompletionParams:
    max_tokens: int = 160
    temperature: float = 0.7
    stop: tuple[str, ...] = ("\n\n",)
    seed: int | None = None


class LMBackend(Protocol):
    def complete(self, prompt: str, params: CompletionParams) -> str: ...


@dataclass(frozen=True)
class Candidate:
    """A parsed candidate utterance for one generation point."""

    speaker: str
    text: str
    selected_facts: tuple[FactRef | str, ...] = ()
    raw: str = ""
    warnings: tuple[str, ...] = ()


# ---------------------------------------------------------------------------
# backends
# ---------------------------------------------------------------------------

_PARTICIPANTS_RE = re.compile(r"^DIALOG PARTICIPANTS:\n(?P<names>.+)$", re.MULTILINE)
_UTTERANCE_SCAN_RE = re.compile(r"^(?:utterance: )?> (?P<speaker>[^:]+): ", re.MULTILINE)
_FACT_STATEMENT_RE = re.compile(r"^(?P<entity>\S.*)\n(?P<first>   \S.*)$", re.MULTILINE)

_MOCK_TEMPLATES = (
    "There is more to this than I let on.",
    "Ask around the docks if you doubt me.",
    "That is not a promise I can make lightly.",
    "You will want to hear the rest before deciding.",
    "Fine. But we do this my way.",
    "I have seen what happens to people who ask twice.",
)


class MockBackend:
    """Deterministic completion stub driven entirely by the prompt text.

    The reply alternates speakers by reading the participants line and the
    last utterance, cycles through a fixed sentence list, and, when the
    prompt is in knowledge-selection format, first echoes one statement from
    the FACTS section as a fact line. Identical construction arguments and
    call sequences reproduce identical outputs.
    """

    def __init__(self, seed: int = 0, script: Sequence[str] | None = None) -> None:
        self._rng = random.Random(seed)
        self._script = list(script) if script is not None else None
        self._calls = 0

    def complete(self, prompt: str, params: CompletionParams) -> str:
        self._calls += 1
        if self._script is not None:
            return self._script[(self._calls - 1) % len(self._script)]

        match = _PARTICIPANTS_RE.search(prompt)
        names = [n.strip() for n in match.group("names").split(",")] if match else ["Player"]
        speakers = _UTTERANCE_SCAN_RE.findall(prompt)
        if speakers and speakers[-1] in names:
            speaker = names[(names.index(speakers[-1]) + 1) % len(names)]
        else:
            speaker = names[0]

        sentence = _MOCK_TEMPLATES[self._calls % len(_MOCK_TEMPLATES)]
        text = f"{sentence} (take {self._calls})"
        utterance = f"> {speaker}: {text}"
        if "utterance: > " not in prompt:
            return utterance

        lines = [utterance]
        facts = _FACT_STATEMENT_RE.findall(prompt)
        if facts:
            entity, first = facts[self._rng.randrange(len(facts))]
            lines.insert(0, f"{entity} fact: {first.strip()}")
        return "\n".join(["", *lines, ""])


class HTTPBackend:
    """OpenAI-compatible completions client with one retry on transport errors."""

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        model: str | None = None,
        timeout: float = 60.0,
        backoff: float = 0.5,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.model = model
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)
        self._backoff = backoff

    @classmethod
    def from_env(cls, **kwargs) -> "HTTPBackend":
        base_url = os.environ.get("QW_LM_BASE_URL")
        if not base_url:
            raise BackendError("QW_LM_BASE_URL is not set")
        return cls(
            base_url,
            api_key=os.environ.get("QW_LM_API_KEY"),
            model=os.environ.get("QW_LM_MODEL"),
            **kwargs,
        )

    def complete(self, prompt: str, params: CompletionParams) -> str:
        payload: dict = {
            "prompt": prompt,
            "max_tokens": params.max_tokens,
            "temperature": params.temperature,
            "stop": list(params.stop),
        }
        if self.model:
            payload["model"] = self.model
        if params.seed is not None:
            payload["seed"] = params.seed
        url = f"{self.base_url}/completions"
        last_error: Exception | None = None
        for attempt in range(2):
            if attempt:
                time.sleep(self._backoff * (2 ** (attempt - 1)))
            try:
                response = self._client.post(url, json=payload)
            except httpx.TransportError as exc:
                last_error = exc
                continue
            if response.status_code in (429,) or response.status_code >= 500:
                last_error = BackendError(f"backend returned {response.status_code}")
                continue
            if response.status_code >= 400:
                raise BackendError(f"backend returned {response.status_code}: {response.text}")
            try:
                return response.json()["choices"][0]["text"]
            except (KeyError, IndexError, ValueError) as exc:
                raise BackendError(f"malformed completion response: {exc}") from exc
        raise BackendError(f"backend failed after retry: {last_error}")


# ---------------------------------------------------------------------------
# completion parsing
# ---------------------------------------------------------------------------

_UTTERANCE_LINE_RE = re.compile(r"^(?:utterance: )?> (?P<speaker>[^:]+): (?P<text>.+)$")
_FACT_LINE_RE = re.compile(r"^(?P<label>.+?) fact: (?P<text>.+)$")


def _completion_block(raw: str) -> list[str]:
    """Lines up to the first blank line after content starts."""
    lines = raw.split("\n")
    start = 0
    while start < len(lines) and not lines[start].strip():
        start += 1
    block: list[str] = []
    for line in lines[start:]:
        if not line.strip():
            break
        block.append(line)
    return block


def parse_completion(
    raw: str,
    spec: DialogueSpec,
    ks_mode: bool = False,
    expected_speaker: str | None = None,
) -> Candidate:
    """Parse a raw completion into a candidate utterance.

    In ks_mode, leading "<label> fact: <text>" lines are resolved against
    Q union B by exact then whitespace/case-normalized text match;
    unresolvable lines are kept raw. An out-of-cast speaker is reassigned to
    ``expected_speaker`` with a warning when one is configured, otherwise it
    is a parse error. Content after the first blank line is discarded.
    """
    block = _completion_block(raw)
    facts: list[FactRef | str] = []
    speaker = text = None
    warnings: list[str] = []
    for line in block:
        utterance = _UTTERANCE_LINE_RE.match(line.strip())
        if utterance:
            speaker = utterance.group("speaker").strip()
            text = utterance.group("text").strip()
            break
        if ks_mode:
            fact = _FACT_LINE_RE.match(line.strip())
            if fact:
                ref = resolve_statement_text(spec, fact.group("text"))
                facts.append(ref if ref is not None else line.strip())
    if speaker is None or not text:
        raise CompletionParseError(f"no utterance line found in completion: {raw!r}")
    if speaker not in spec.participant_names:
        if expected_speaker is None:
            raise CompletionParseError(f"unknown speaker {speaker!r} in completion")
        warnings.append(f"speaker {speaker!r} not in participants; reassigned to {expected_speaker!r}")
        speaker = expected_speaker
    return Candidate(
        speaker=speaker,
        text=text,
        selected_facts=tuple(facts),
        raw=raw,
        warnings=tuple(warnings),
    )


def default_expected_speaker(spec: DialogueSpec, last_speaker: str) -> str:
    """Alternate player/NPC relative to the most recent speaker."""
    player = spec.player_name
    if last_speaker == player:
        for name in spec.participant_names:
            if name != player:
                return name
        return player
    return player


# ---------------------------------------------------------------------------
# candidate generation
# ---------------------------------------------------------------------------


def generate_candidates(
    task: GenerationTask,
    config: PromptConfig,
    k: int,
    backend: LMBackend,
    index: BM25Index | None = None,
    pool: Sequence[Exemplar] = (),
    params: CompletionParams = CompletionParams(),
    expected_speaker: str | None = None,
) -> tuple[Prompt, list[Candidate]]:
    """Build the prompt once, then issue k completions and parse them.

    A candidate whose completion fails to parse is retried once with a
    fresh completion, then dropped. Raises if every slot drops.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    prompt = build_icl_prompt(task, config, index, pool)
    if expected_speaker is None:
        last = task.subtree.nodes[task.most_recent].speaker
        expected_speaker = default_expected_speaker(task.spec, last)
    ks_mode = config.mode in ("ks", "ks_one_fact", "ks_oracle")
    candidates: list[Candidate] = []
    for _ in range(k):
        candidate = None
        for _attempt in range(2):
            raw = backend.complete(prompt.text, params)
            try:
                candidate = parse_completion(raw, task.spec, ks_mode, expected_speaker)
                break
            except CompletionParseError:
                continue
        if candidate is not None:
            candidates.append(candidate)
    if not candidates:
        raise CompletionParseError("zero parseable candidates")
    return prompt, candidates


# ---------------------------------------------------------------------------
# spine growth
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpineResult:
    """A grown multi-candidate tree plus the committed linear path."""

    tree: DialogueTree
    committed_path: tuple[str, ...]
    rounds: int
    round_candidates: tuple[tuple[str, ...], ...]
    complete: bool = True


class SeededRandomPolicy:
    """Commit a uniformly random candidate each round, reproducibly."""

    def __init__(self, seed: int) -> None:
        self._rng = random.Random(seed)

    def choose(self, round_index: int, candidate_ids: Sequence[str]) -> str:
        return candidate_ids[self._rng.randrange(len(candidate_ids))]


class ExternalChoicePolicy:
    """Delegate the commit decision to a callback (a human, in practice)."""

    def __init__(self, choose_fn: Callable[[int, Sequence[str]], str]) -> None:
        self._choose_fn = choose_fn

    def choose(self, round_index: int, candidate_ids: Sequence[str]) -> str:
        return self._choose_fn(round_index, candidate_ids)


CommitPolicy = SeededRandomPolicy | ExternalChoicePolicy


def attach_candidates(
    tree: DialogueTree,
    parent_id: str,
    round_index: int,
    candidates: Sequence[Candidate],
) -> tuple[DialogueTree, tuple[str, ...]]:
    """Add one round's candidates as uncommitted children of the parent."""
    nodes = dict(tree.nodes)
    edges = list(tree.edges)
    ids: list[str] = []
    for j, candidate in enumerate(candidates, start=1):
        node_id = f"r{round_index:02d}c{j}"
        resolved = tuple(f for f in candidate.selected_facts if isinstance(f, FactRef))
        nodes[node_id] = UtteranceNode(
            id=node_id,
            speaker=candidate.speaker,
            text=candidate.text,
            support_facts=resolved,
            origin=ORIGIN_UNCOMMITTED,
        )
        edges.append(Edge(parent_id, node_id))
        ids.append(node_id)
    return DialogueTree(nodes=nodes, edges=tuple(edges), start_id=tree.start_id), tuple(ids)


def commit_candidate(tree: DialogueTree, node_id: str) -> DialogueTree:
    nodes = dict(tree.nodes)
    nodes[node_id] = replace(nodes[node_id], origin=ORIGIN_COMMITTED)
    return DialogueTree(nodes=nodes, edges=tree.edges, start_id=tree.start_id)


def generate_spine(
    spec: DialogueSpec,
    start: UtteranceNode,
    rounds: int,
    k: int,
    config: PromptConfig,
    policy: CommitPolicy,
    backend: LMBackend,
    index: BM25Index | None = None,
    pool: Sequence[Exemplar] = (),
    params: CompletionParams = CompletionParams(),
) -> SpineResult:
    """Grow a spine: k candidates per round, one committed per round.

    All candidates stay in the tree; the uncommitted ones remain flagged
    leaves, so a fully successful run yields 1 + rounds * k nodes and a
    committed path of rounds + 1. A round that produces no parseable
    candidate ends the spine early with ``complete=False``.
    """
    if rounds < 1 or k < 1:
        raise ValueError("rounds and k must be at least 1")
    tree = DialogueTree(nodes={start.id: start}, edges=(), start_id=start.id)
    committed = [start.id]
    round_candidates: list[tuple[str, ...]] = []

    for round_index in range(1, rounds + 1):
        most_recent = committed[-1]
        history = linearize(tree, most_recent)
        task = GenerationTask(
            spec=spec, subtree=tree, most_recent=most_recent, history=history
        )
        try:
            _, candidates = generate_candidates(
                task, config, k, backend, index=index, pool=pool, params=params
            )
        except (CompletionParseError, BackendError):
            return SpineResult(
                tree, tuple(committed), round_index - 1, tuple(round_candidates), complete=False
            )
        tree, ids = attach_candidates(tree, most_recent, round_index, candidates)
        round_candidates.append(ids)
        chosen = policy.choose(round_index, ids)
        if chosen not in ids:
            raise ValueError(f"policy chose {chosen!r}, not among round candidates {ids}")
        tree = commit_candidate(tree, chosen)
        committed.append(chosen)

    return SpineResult(tree, tuple(committed), rounds, tuple(round_candidates))
