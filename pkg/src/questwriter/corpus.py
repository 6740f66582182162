"""Corpus container, canonical JSON serialization, quest splits, and stats.

The canonical on-disk form is UTF-8 JSON with sorted keys, two-space
indentation, LF line endings, and a trailing newline. Serializing a corpus
and loading it back reproduces the identical canonical bytes.

Schema (top level)::

    {
      "quests":    [{"name", "synopsis", "synopsis_walkthrough", "objectives"}],
      "dialogues": [{"name", "quest", "participants", "in_objectives",
                     "out_objectives", "bios", "tree"}],
      "splits":    {"<quest name>": "train" | "dev" | "test"}   # optional
    }

Statements serialize as {"source", "i", "text"}; fact refs as {"source", "i"};
edges as {"from", "to", "cond"}; participants as {"name", "player"}.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .model import (
    BiographyPassage,
    DialogueSpec,
    DialogueTree,
    Edge,
    FactRef,
    Finding,
    Objective,
    Participant,
    QuestSpec,
    SchemaError,
    Statement,
    UtteranceNode,
    ValidationReport,
    validate_spec,
    validate_tree,
)

__all__ = [
    "Corpus",
    "StatsReport",
    "canonical_json",
    "corpus_to_dict",
    "corpus_from_dict",
    "dump_corpus",
    "load_corpus",
    "validate_corpus",
    "split_by_quests",
    "corpus_stats",
    "tree_to_dict",
    "tree_from_dict",
    "spec_to_dict",
    "spec_from_dict",
]

SPLITS = ("train", "dev", "test")


@dataclass(frozen=True)
class Corpus:
    quests: tuple[QuestSpec, ...]
    dialogues: tuple[tuple[DialogueSpec, DialogueTree], ...]
    split_assignment: dict[str, str] | None = None

    def quest(self, name: str) -> QuestSpec:
        for quest in self.quests:
            if quest.quest_name == name:
                return quest
        raise KeyError(name)

    def dialogues_for_split(self, split: str) -> tuple[tuple[DialogueSpec, DialogueTree], ...]:
        if self.split_assignment is None:
            raise SchemaError("corpus has no split assignment")
        return tuple(
            (spec, tree)
            for spec, tree in self.dialogues
            if self.split_assignment.get(spec.quest_name) == split
        )


def canonical_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, ensure_ascii=False, indent=2) + "\n"


# ---------------------------------------------------------------------------
# dict <-> dataclass conversion
# ---------------------------------------------------------------------------


def _statement_to_dict(statement: Statement) -> dict[str, Any]:
    return {"source": statement.source, "i": statement.index, "text": statement.text}


def _statements_from_list(raw: list[dict[str, Any]], expect_source: str | None = None) -> tuple[Statement, ...]:
    statements = []
    for i, item in enumerate(raw):
        source = item["source"]
        if expect_source is not None and source != expect_source:
            raise SchemaError(f"statement source {source!r} does not match owner {expect_source!r}")
        if item["i"] != i:
            raise SchemaError(f"statement indices for {source!r} not contiguous (saw {item['i']} at {i})")
        statements.append(Statement(source, i, item["text"]))
    return tuple(statements)


def _objective_to_dict(objective: Objective) -> dict[str, Any]:
    return {
        "name": objective.name,
        "game_log": [_statement_to_dict(s) for s in objective.game_log],
        "walkthrough": [_statement_to_dict(s) for s in objective.walkthrough],
    }


def _objective_from_dict(raw: dict[str, Any], prefix: str) -> Objective:
    name = raw["name"]
    return Objective(
        name=name,
        game_log=_statements_from_list(raw.get("game_log", []), f"{prefix}/{name}/log"),
        walkthrough=_statements_from_list(raw.get("walkthrough", []), f"{prefix}/{name}/walkthrough"),
    )


def _tree_to_dict(tree: DialogueTree) -> dict[str, Any]:
    return {
        "start": tree.start_id,
        "nodes": [
            {
                "id": node.id,
                "speaker": node.speaker,
                "text": node.text,
                "facts": [{"source": f.source, "i": f.index} for f in node.support_facts],
                "origin": node.origin,
            }
            for node in sorted(tree.nodes.values(), key=lambda n: n.id)
        ],
        "edges": [
            {"from": e.from_id, "to": e.to_id, "cond": e.conditioned} for e in tree.edges
        ],
    }


def _tree_from_dict(raw: dict[str, Any]) -> DialogueTree:
    nodes = {}
    for item in raw["nodes"]:
        node = UtteranceNode(
            id=item["id"],
            speaker=item["speaker"],
            text=item["text"],
            support_facts=tuple(FactRef(f["source"], f["i"]) for f in item.get("facts", [])),
            origin=item.get("origin", "gold"),
        )
        if node.id in nodes:
            raise SchemaError(f"duplicate node id {node.id!r}")
        nodes[node.id] = node
    edges = tuple(
        Edge(e["from"], e["to"], bool(e.get("cond", False))) for e in raw.get("edges", [])
    )
    return DialogueTree(nodes=nodes, edges=edges, start_id=raw["start"])


def _quest_to_dict(quest: QuestSpec) -> dict[str, Any]:
    return {
        "name": quest.quest_name,
        "synopsis": [_statement_to_dict(s) for s in quest.synopsis],
        "synopsis_walkthrough": [_statement_to_dict(s) for s in quest.synopsis_walkthrough],
        "objectives": [_objective_to_dict(o) for o in quest.objectives],
    }


def _quest_from_dict(raw: dict[str, Any]) -> QuestSpec:
    name = raw["name"]
    return QuestSpec(
        quest_name=name,
        synopsis=_statements_from_list(raw.get("synopsis", []), f"synopsis/{name}"),
        synopsis_walkthrough=_statements_from_list(
            raw.get("synopsis_walkthrough", []), f"synopsis/{name}/walkthrough"
        ),
        objectives=tuple(_objective_from_dict(o, "in") for o in raw.get("objectives", [])),
    )


def spec_to_dict(spec: DialogueSpec) -> dict[str, Any]:
    return {
        "name": spec.name,
        "quest": spec.quest_name,
        "participants": [{"name": p.name, "player": p.is_player} for p in spec.participants],
        "in_objectives": [_objective_to_dict(o) for o in spec.in_objectives],
        "out_objectives": [_objective_to_dict(o) for o in spec.out_objectives],
        "bios": [
            {"entity": b.entity_name, "statements": [_statement_to_dict(s) for s in b.statements]}
            for b in spec.bios
        ],
    }


def spec_from_dict(raw: dict[str, Any]) -> DialogueSpec:
    bios = tuple(
        BiographyPassage(
            entity_name=b["entity"],
            statements=_statements_from_list(b["statements"], f"bio/{b['entity']}"),
        )
        for b in raw.get("bios", [])
    )
    return DialogueSpec(
        name=raw["name"],
        quest_name=raw["quest"],
        participants=tuple(
            Participant(p["name"], bool(p.get("player", False))) for p in raw["participants"]
        ),
        in_objectives=tuple(_objective_from_dict(o, "in") for o in raw.get("in_objectives", [])),
        out_objectives=tuple(_objective_from_dict(o, "out") for o in raw.get("out_objectives", [])),
        bios=bios,
    )


def _dialogue_to_dict(spec: DialogueSpec, tree: DialogueTree) -> dict[str, Any]:
    payload = spec_to_dict(spec)
    payload["tree"] = _tree_to_dict(tree)
    return payload


def _dialogue_from_dict(raw: dict[str, Any]) -> tuple[DialogueSpec, DialogueTree]:
    return spec_from_dict(raw), _tree_from_dict(raw["tree"])


def tree_to_dict(tree: DialogueTree) -> dict[str, Any]:
    return _tree_to_dict(tree)


def tree_from_dict(raw: dict[str, Any]) -> DialogueTree:
    return _tree_from_dict(raw)


def corpus_to_dict(corpus: Corpus) -> dict[str, Any]:
    payload: dict[str, Any] = {
        "quests": [_quest_to_dict(q) for q in corpus.quests],
        "dialogues": [_dialogue_to_dict(spec, tree) for spec, tree in corpus.dialogues],
    }
    if corpus.split_assignment is not None:
        payload["splits"] = dict(corpus.split_assignment)
    return payload


def corpus_from_dict(payload: dict[str, Any]) -> Corpus:
    quests = tuple(_quest_from_dict(q) for q in payload.get("quests", []))
    dialogues = tuple(_dialogue_from_dict(d) for d in payload.get("dialogues", []))
    splits = payload.get("splits")
    if splits is not None:
        for quest_name, split in splits.items():
            if split not in SPLITS:
                raise SchemaError(f"unknown split {split!r} for quest {quest_name!r}")
        splits = dict(splits)
    return Corpus(quests=quests, dialogues=dialogues, split_assignment=splits)


def dump_corpus(corpus: Corpus, path: str | Path | None = None) -> str:
    text = canonical_json(corpus_to_dict(corpus))
    if path is not None:
        Path(path).write_text(text, encoding="utf-8", newline="\n")
    return text


def load_corpus(path: str | Path) -> Corpus:
    return corpus_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def validate_corpus(corpus: Corpus) -> ValidationReport:
    """Cross-validate every dialogue against its quest and its own tree."""
    findings: list[Finding] = []
    quest_names = {q.quest_name for q in corpus.quests}
    if len(quest_names) != len(corpus.quests):
        findings.append(Finding("duplicate-quest", "quest names are not unique"))

    dialogue_names = [spec.name for spec, _ in corpus.dialogues]
    if len(set(dialogue_names)) != len(dialogue_names):
        findings.append(Finding("duplicate-dialogue", "dialogue names are not unique"))

    for spec, tree in corpus.dialogues:
        prefix = f"{spec.name}: "
        if spec.quest_name not in quest_names:
            findings.append(
                Finding("unknown-quest", f"{prefix}quest {spec.quest_name!r} not in corpus", spec.name)
            )
        report = validate_tree(tree, spec.participant_names).merged(validate_spec(spec))
        findings.extend(
            Finding(f.code, prefix + f.message, f.subject or spec.name, f.severity)
            for f in report.findings
        )
    if corpus.split_assignment is not None:
        for quest_name in corpus.split_assignment:
            if quest_name not in quest_names:
                findings.append(
                    Finding("unknown-quest", f"split assignment names unknown quest {quest_name!r}", quest_name)
                )
    return ValidationReport(tuple(findings))


def split_by_quests(corpus: Corpus, counts: tuple[int, int, int], seed: int) -> Corpus:
    """Partition quests into train/dev/test with the requested sizes.

    Deterministic for a fixed seed: quest names are sorted, shuffled with
    ``random.Random(seed)``, and sliced.
    """
    names = sorted(q.quest_name for q in corpus.quests)
    if sum(counts) != len(names):
        raise SchemaError(
            f"split counts {counts} sum to {sum(counts)}, corpus has {len(names)} quests"
        )
    rng = random.Random(seed)
    rng.shuffle(names)
    train, dev, _ = counts
    assignment: dict[str, str] = {}
    for position, name in enumerate(names):
        if position < train:
            assignment[name] = "train"
        elif position < train + dev:
            assignment[name] = "dev"
        else:
            assignment[name] = "test"
    return Corpus(corpus.quests, corpus.dialogues, assignment)


@dataclass(frozen=True)
class StatsReport:
    """Dataset summary mirroring the annotation-density analysis."""

    num_quests: int
    num_dialogues: int
    num_nodes: int
    num_npc_nodes: int
    annotated_fraction: float | None
    npc_annotated_fraction: float | None
    mean_facts_per_npc_node: float | None
    mean_quest_statements_per_dialogue: float | None
    mean_bio_statements_per_dialogue: float | None

    def to_dict(self) -> dict[str, Any]:
        return {
            "num_quests": self.num_quests,
            "num_dialogues": self.num_dialogues,
            "num_nodes": self.num_nodes,
            "num_npc_nodes": self.num_npc_nodes,
            "annotated_fraction": self.annotated_fraction,
            "npc_annotated_fraction": self.npc_annotated_fraction,
            "mean_facts_per_npc_node": self.mean_facts_per_npc_node,
            "mean_quest_statements_per_dialogue": self.mean_quest_statements_per_dialogue,
            "mean_bio_statements_per_dialogue": self.mean_bio_statements_per_dialogue,
        }


def corpus_stats(corpus: Corpus) -> StatsReport:
    """Node and annotation-density counts; fractions are None when undefined."""
    num_nodes = 0
    num_npc = 0
    annotated = 0
    npc_annotated = 0
    npc_facts = 0
    quest_statement_counts: list[int] = []
    bio_statement_counts: list[int] = []

    for spec, tree in corpus.dialogues:
        player = spec.player_name
        quest_statement_counts.append(len(spec.quest_statements()))
        bio_statement_counts.append(len(spec.bio_statements()))
        for node in tree.nodes.values():
            num_nodes += 1
            has_facts = bool(node.support_facts)
            if has_facts:
                annotated += 1
            if node.speaker != player:
                num_npc += 1
                npc_facts += len(node.support_facts)
                if has_facts:
                    npc_annotated += 1

    def ratio(numerator: int, denominator: int) -> float | None:
        return numerator / denominator if denominator else None

    return StatsReport(
        num_quests=len(corpus.quests),
        num_dialogues=len(corpus.dialogues),
        num_nodes=num_nodes,
        num_npc_nodes=num_npc,
        annotated_fraction=ratio(annotated, num_nodes),
        npc_annotated_fraction=ratio(npc_annotated, num_npc),
        mean_facts_per_npc_node=ratio(npc_facts, num_npc),
        mean_quest_statements_per_dialogue=(
            sum(quest_statement_counts) / len(quest_statement_counts)
            if quest_statement_counts
            else None
        ),
        mean_bio_statements_per_dialogue=(
            sum(bio_statement_counts) / len(bio_statement_counts)
            if bio_statement_counts
            else None
        ),
    )
