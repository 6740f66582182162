"""Core ontology and dialogue-graph types.

Quest constraints, biography passages, and participants constrain a
branching dialogue graph of speaker-attributed utterances. Everything here
is an immutable value; operations are pure functions, so instances are safe
to share across threads.

Statement sources follow a slash convention that keeps fact references
unique within one dialogue spec:

    bio/<entity>                  biography sentence
    in/<objective>/log            in-objective game log sentence
    in/<objective>/walkthrough    in-objective walkthrough sentence
    out/<objective>/log           out-objective game log sentence
    synopsis/<quest>              quest synopsis sentence
    synopsis/<quest>/walkthrough  quest synopsis walkthrough sentence
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace
from functools import lru_cache

__all__ = [
    "Statement",
    "BiographyPassage",
    "Objective",
    "QuestSpec",
    "Participant",
    "DialogueSpec",
    "FactRef",
    "UtteranceNode",
    "Edge",
    "DialogueTree",
    "Finding",
    "ValidationReport",
    "SchemaError",
    "FactResolutionError",
    "ORIGIN_GOLD",
    "ORIGIN_COMMITTED",
    "ORIGIN_UNCOMMITTED",
    "statements_from_texts",
    "source_label",
    "validate_tree",
    "validate_spec",
    "extract_quest_subgraph",
    "resolve_fact",
    "reachable_from_start",
]

ORIGIN_GOLD = "gold"
ORIGIN_COMMITTED = "generated-committed"
ORIGIN_UNCOMMITTED = "generated-uncommitted"
_ORIGINS = frozenset({ORIGIN_GOLD, ORIGIN_COMMITTED, ORIGIN_UNCOMMITTED})


class SchemaError(ValueError):
    """Raised when data violates the corpus schema or a type invariant."""


class FactResolutionError(KeyError):
    """Raised when a fact reference does not resolve within a dialogue spec."""


@dataclass(frozen=True)
class Statement:
    """One indexed sentence belonging to a quest section or biography."""

    source: str
    index: int
    text: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise SchemaError(f"empty statement text in {self.source}[{self.index}]")
        if self.index < 0:
            raise SchemaError(f"negative statement index in {self.source}")


def statements_from_texts(source: str, texts: list[str] | tuple[str, ...]) -> tuple[Statement, ...]:
    return tuple(Statement(source, i, t) for i, t in enumerate(texts))


def source_label(source: str) -> str:
    """Human label for a statement source: the entity or section name.

    "bio/Agnes" -> "Agnes"; "in/Find the Ledger/log" -> "Find the Ledger";
    unprefixed sources are returned as-is.
    """
    parts = source.split("/")
    if len(parts) >= 2 and parts[0] in ("bio", "in", "out", "synopsis"):
        return parts[1]
    return source


@dataclass(frozen=True)
class BiographyPassage:
    """Lore sentences about one game entity."""

    entity_name: str
    statements: tuple[Statement, ...]

    def __post_init__(self) -> None:
        if not self.statements:
            raise SchemaError(f"biography for {self.entity_name!r} has no statements")

    @property
    def source(self) -> str:
        return f"bio/{self.entity_name}"


@dataclass(frozen=True)
class Objective:
    """A quest objective: name, journal log sentences, walkthrough sentences."""

    name: str
    game_log: tuple[Statement, ...] = ()
    walkthrough: tuple[Statement, ...] = ()

    def __post_init__(self) -> None:
        if not self.name.strip():
            raise SchemaError("objective name must be non-empty")


@dataclass(frozen=True)
class QuestSpec:
    """A side quest: synopsis plus its ordered objectives."""

    quest_name: str
    synopsis: tuple[Statement, ...] = ()
    synopsis_walkthrough: tuple[Statement, ...] = ()
    objectives: tuple[Objective, ...] = ()


@dataclass(frozen=True)
class Participant:
    name: str
    is_player: bool = False


@dataclass(frozen=True)
class DialogueSpec:
    """Constraint bundle for one dialogue: Q, B, and the participant list.

    ``in_objectives`` carry logs and walkthroughs; ``out_objectives`` carry
    logs only (their walkthroughs must be empty). Exactly one participant is
    the player.
    """

    name: str
    quest_name: str
    participants: tuple[Participant, ...]
    in_objectives: tuple[Objective, ...] = ()
    out_objectives: tuple[Objective, ...] = ()
    bios: tuple[BiographyPassage, ...] = ()

    def __post_init__(self) -> None:
        players = [p for p in self.participants if p.is_player]
        if len(players) != 1:
            raise SchemaError(
                f"dialogue {self.name!r} must have exactly one player participant, "
                f"got {len(players)}"
            )
        for objective in self.out_objectives:
            if objective.walkthrough:
                raise SchemaError(
                    f"out-objective {objective.name!r} must not carry a walkthrough"
                )
        names = [p.name for p in self.participants]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate participant names in dialogue {self.name!r}")
        entities = [b.entity_name for b in self.bios]
        if len(set(entities)) != len(entities):
            raise SchemaError(f"duplicate biography entities in dialogue {self.name!r}")

    @property
    def player_name(self) -> str:
        return next(p.name for p in self.participants if p.is_player)

    @property
    def participant_names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.participants)

    def quest_statements(self) -> tuple[Statement, ...]:
        """All Q statements: in logs + walkthroughs, then out logs."""
        out: list[Statement] = []
        for objective in self.in_objectives:
            out.extend(objective.game_log)
            out.extend(objective.walkthrough)
        for objective in self.out_objectives:
            out.extend(objective.game_log)
        return tuple(out)

    def bio_statements(self) -> tuple[Statement, ...]:
        return tuple(s for b in self.bios for s in b.statements)

    def all_statements(self) -> tuple[Statement, ...]:
        """Q followed by B, the full fact pool for this dialogue."""
        return self.quest_statements() + self.bio_statements()


@dataclass(frozen=True)
class FactRef:
    """Reference to one statement in Q or B, by source and ordinal."""

    source: str
    index: int


@dataclass(frozen=True)
class UtteranceNode:
    """One spoken line in the dialogue graph."""

    id: str
    speaker: str
    text: str
    support_facts: tuple[FactRef, ...] = ()
    origin: str = ORIGIN_GOLD

    def __post_init__(self) -> None:
        if not self.id:
            raise SchemaError("utterance node id must be non-empty")
        if not self.text.strip():
            raise SchemaError(f"utterance node {self.id!r} has empty text")
        if self.origin not in _ORIGINS:
            raise SchemaError(f"unknown node origin {self.origin!r}")


@dataclass(frozen=True)
class Edge:
    from_id: str
    to_id: str
    conditioned: bool = False

    @property
    def key(self) -> tuple[str, str]:
        return (self.from_id, self.to_id)


@dataclass(frozen=True)
class DialogueTree:
    """Directed utterance graph: one start node, cycles and multiple exits allowed."""

    nodes: dict[str, UtteranceNode]
    edges: tuple[Edge, ...]
    start_id: str

    def __post_init__(self) -> None:
        for node_id, node in self.nodes.items():
            if node_id != node.id:
                raise SchemaError(f"node map key {node_id!r} != node id {node.id!r}")

    def successors(self, node_id: str) -> tuple[str, ...]:
        return tuple(e.to_id for e in self.edges if e.from_id == node_id)

    def predecessors(self, node_id: str) -> tuple[str, ...]:
        return tuple(e.from_id for e in self.edges if e.to_id == node_id)

    def edge_keys(self) -> tuple[tuple[str, str], ...]:
        return tuple(e.key for e in self.edges)

    def exit_ids(self) -> tuple[str, ...]:
        with_out = {e.from_id for e in self.edges}
        return tuple(sorted(n for n in self.nodes if n not in with_out))


@dataclass(frozen=True)
class Finding:
    """One validation finding. ``severity`` is "error" or "warning"."""

    code: str
    message: str
    subject: str = ""
    severity: str = "error"


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple[Finding, ...] = ()

    @property
    def ok(self) -> bool:
        return not any(f.severity == "error" for f in self.findings)

    def errors(self) -> tuple[Finding, ...]:
        return tuple(f for f in self.findings if f.severity == "error")

    def merged(self, other: ValidationReport) -> ValidationReport:
        return ValidationReport(self.findings + other.findings)


def reachable_from_start(tree: DialogueTree) -> set[str]:
    """Node ids reachable from the start node, start included."""
    if tree.start_id not in tree.nodes:
        return set()
    adjacency: dict[str, list[str]] = {}
    for edge in tree.edges:
        adjacency.setdefault(edge.from_id, []).append(edge.to_id)
    seen = {tree.start_id}
    queue = deque([tree.start_id])
    while queue:
        current = queue.popleft()
        for nxt in adjacency.get(current, ()):
            if nxt in tree.nodes and nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return seen


def validate_tree(tree: DialogueTree, participants: tuple[str, ...] | list[str]) -> ValidationReport:
    """Check all DialogueTree invariants plus speaker membership.

    Findings are data, not failures; an empty report means the tree is
    well-formed: start present, edges resolve, every node reachable from
    start, every speaker in the participant list, no duplicate edges.
    """
    findings: list[Finding] = []
    known = set(participants)

    if tree.start_id not in tree.nodes:
        findings.append(Finding("missing-start", f"start node {tree.start_id!r} not in nodes", tree.start_id))
        return ValidationReport(tuple(findings))

    for node in tree.nodes.values():
        if node.speaker not in known:
            findings.append(
                Finding("unknown-speaker", f"node {node.id!r} spoken by unknown speaker {node.speaker!r}", node.id)
            )

    seen_edges: set[tuple[str, str]] = set()
    for edge in tree.edges:
        for endpoint in (edge.from_id, edge.to_id):
            if endpoint not in tree.nodes:
                findings.append(
                    Finding("dangling-edge", f"edge {edge.from_id}->{edge.to_id} references missing node {endpoint!r}", endpoint)
                )
        if edge.key in seen_edges:
            findings.append(
                Finding("duplicate-edge", f"edge {edge.from_id}->{edge.to_id} appears more than once", f"{edge.from_id}->{edge.to_id}")
            )
        seen_edges.add(edge.key)

    reachable = reachable_from_start(tree)
    for node_id in sorted(tree.nodes):
        if node_id not in reachable:
            findings.append(Finding("unreachable", f"node {node_id!r} unreachable from start", node_id))

    return ValidationReport(tuple(findings))


def validate_spec(spec: DialogueSpec) -> ValidationReport:
    """Spec-level checks: statement contiguity and biography coverage.

    A missing biography for an NPC participant is a warning, not an error;
    designer-written specs legitimately vary in completeness.
    """
    findings: list[Finding] = []

    by_source: dict[str, list[int]] = {}
    for statement in spec.all_statements():
        by_source.setdefault(statement.source, []).append(statement.index)
    for source, indices in by_source.items():
        if indices != list(range(len(indices))):
            findings.append(
                Finding("bad-indices", f"statement indices for {source!r} not contiguous from 0", source)
            )

    bio_entities = {b.entity_name for b in spec.bios}
    for participant in spec.participants:
        if not participant.is_player and participant.name not in bio_entities:
            findings.append(
                Finding(
                    "missing-biography",
                    f"NPC participant {participant.name!r} has no biography passage",
                    participant.name,
                    severity="warning",
                )
            )

    return ValidationReport(tuple(findings))


def extract_quest_subgraph(
    raw: DialogueTree,
    keep_conditioned: set[tuple[str, str]] | frozenset[tuple[str, str]] = frozenset(),
) -> DialogueTree:
    """Traverse from start following unconditioned edges plus a whitelist.

    Keeps every edge with ``conditioned=False`` and any conditioned edge
    whose (from, to) key is whitelisted, then prunes nodes no longer
    reachable from the start. Raises SchemaError if the start node is
    missing.
    """
    if raw.start_id not in raw.nodes:
        raise SchemaError(f"missing start node {raw.start_id!r}")

    kept_edges = tuple(
        e for e in raw.edges if not e.conditioned or e.key in keep_conditioned
    )
    pruned = DialogueTree(nodes=dict(raw.nodes), edges=kept_edges, start_id=raw.start_id)
    alive = reachable_from_start(pruned)
    return DialogueTree(
        nodes={node_id: node for node_id, node in raw.nodes.items() if node_id in alive},
        edges=tuple(e for e in kept_edges if e.from_id in alive and e.to_id in alive),
        start_id=raw.start_id,
    )


@lru_cache(maxsize=256)
def _fact_pools(spec: DialogueSpec) -> dict[str, tuple[Statement, ...]]:
    pools: dict[str, tuple[Statement, ...]] = {}
    for bio in spec.bios:
        pools[bio.source] = bio.statements
    for objective in spec.in_objectives:
        pools[f"in/{objective.name}/log"] = objective.game_log
        pools[f"in/{objective.name}/walkthrough"] = objective.walkthrough
    for objective in spec.out_objectives:
        pools[f"out/{objective.name}/log"] = objective.game_log
    return pools


def resolve_fact(spec: DialogueSpec, ref: FactRef) -> Statement:
    """Look up the statement addressed by (source, index) within Q union B."""
    pools = _fact_pools(spec)
    if ref.source not in pools:
        raise FactResolutionError(f"unknown fact source {ref.source!r} in dialogue {spec.name!r}")
    pool = pools[ref.source]
    if not 0 <= ref.index < len(pool):
        raise FactResolutionError(
            f"fact index {ref.index} out of range for {ref.source!r} (size {len(pool)})"
        )
    return pool[ref.index]


def with_origin(node: UtteranceNode, origin: str) -> UtteranceNode:
    return replace(node, origin=origin)
