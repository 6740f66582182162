from __future__ import annotations

import random

import pytest

from questwriter.corpus import (
    Corpus,
    canonical_json,
    corpus_from_dict,
    corpus_stats,
    corpus_to_dict,
    dump_corpus,
    load_corpus,
    split_by_quests,
    validate_corpus,
)
from questwriter.model import (
    DialogueTree,
    Edge,
    FactRef,
    Participant,
    DialogueSpec,
    QuestSpec,
    SchemaError,
    UtteranceNode,
)


def test_roundtrip_is_identity(salvage_corpus, tmp_path):
    path = tmp_path / "corpus.json"
    first = dump_corpus(salvage_corpus, path)
    reloaded = load_corpus(path)
    assert dump_corpus(reloaded) == first
    assert reloaded == salvage_corpus


def test_canonical_form_sorted_keys_lf(salvage_corpus):
    text = dump_corpus(salvage_corpus)
    assert "\r" not in text
    assert text.endswith("\n")
    lines = text.splitlines()
    assert lines[0] == "{"
    # "dialogues" sorts before "quests"
    assert lines[1].strip().startswith('"dialogues"')


def test_statement_contiguity_enforced_on_load(salvage_corpus):
    payload = corpus_to_dict(salvage_corpus)
    payload["dialogues"][0]["bios"][0]["statements"][1]["i"] = 7
    with pytest.raises(SchemaError):
        corpus_from_dict(payload)


def test_validate_corpus_flags_unknown_quest(salvage_spec, salvage_tree):
    corpus = Corpus(quests=(), dialogues=((salvage_spec, salvage_tree),))
    codes = [f.code for f in validate_corpus(corpus).findings]
    assert "unknown-quest" in codes


def test_validate_corpus_clean(salvage_corpus):
    assert validate_corpus(salvage_corpus).ok


def _quest_only_corpus(n: int) -> Corpus:
    quests = tuple(QuestSpec(quest_name=f"Quest {i:03d}") for i in range(n))
    return Corpus(quests=quests, dialogues=())


def test_split_45_into_28_5_12():
    corpus = split_by_quests(_quest_only_corpus(45), (28, 5, 12), seed=1)
    sizes = {"train": 0, "dev": 0, "test": 0}
    for split in corpus.split_assignment.values():
        sizes[split] += 1
    assert sizes == {"train": 28, "dev": 5, "test": 12}


def test_split_degenerate_all_train():
    corpus = split_by_quests(_quest_only_corpus(7), (7, 0, 0), seed=0)
    assert set(corpus.split_assignment.values()) == {"train"}


def test_split_partition_property_and_determinism():
    base = _quest_only_corpus(20)
    first = split_by_quests(base, (12, 3, 5), seed=42)
    second = split_by_quests(base, (12, 3, 5), seed=42)
    assert first.split_assignment == second.split_assignment

    other = split_by_quests(base, (12, 3, 5), seed=43)
    for corpus in (first, other):
        # oracle: disjoint partition of exactly the quest names
        names = {q.quest_name for q in base.quests}
        groups = {s: {n for n, v in corpus.split_assignment.items() if v == s} for s in ("train", "dev", "test")}
        assert groups["train"] | groups["dev"] | groups["test"] == names
        assert groups["train"] & groups["dev"] == set()
        assert groups["train"] & groups["test"] == set()
        assert groups["dev"] & groups["test"] == set()
        assert (len(groups["train"]), len(groups["dev"]), len(groups["test"])) == (12, 3, 5)


def test_split_bad_counts():
    with pytest.raises(SchemaError):
        split_by_quests(_quest_only_corpus(5), (3, 3, 3), seed=0)


def test_stats_on_fixture(salvage_corpus):
    report = corpus_stats(salvage_corpus)
    assert report.num_nodes == 6
    assert report.num_npc_nodes == 3  # n0, n2, n4 spoken by Ilsa
    assert report.npc_annotated_fraction == 1.0
    assert report.annotated_fraction == 0.5
    assert report.mean_facts_per_npc_node == pytest.approx(4 / 3)
    # Q = 2 log + 2 walkthrough + 2 out log; B = 2 + 3
    assert report.mean_quest_statements_per_dialogue == 6.0
    assert report.mean_bio_statements_per_dialogue == 5.0


def test_stats_empty_corpus():
    report = corpus_stats(Corpus(quests=(), dialogues=()))
    assert report.num_nodes == 0
    assert report.annotated_fraction is None
    assert report.mean_facts_per_npc_node is None


def test_stats_half_annotated_npc_fixture():
    spec = DialogueSpec(
        name="d0", quest_name="q",
        participants=(Participant("NPC"), Participant("Player", is_player=True)),
    )
    nodes = {
        "a": UtteranceNode("a", "NPC", "one", support_facts=(FactRef("bio/NPC", 0),)),
        "b": UtteranceNode("b", "Player", "two"),
        "c": UtteranceNode("c", "NPC", "three"),
        "d": UtteranceNode("d", "Player", "four"),
    }
    tree = DialogueTree(
        nodes=nodes,
        edges=(Edge("a", "b"), Edge("b", "c"), Edge("c", "d")),
        start_id="a",
    )
    quest = QuestSpec(quest_name="q")
    report = corpus_stats(Corpus((quest,), ((spec, tree),)))
    assert report.num_nodes == 4
    assert report.num_npc_nodes == 2
    assert report.npc_annotated_fraction == 0.5
    assert report.annotated_fraction == 0.25


def test_stats_means_match_hand_sums():
    rng = random.Random(5)
    dialogues = []
    quests = []
    for d in range(3):
        quest_name = f"Q{d}"
        quests.append(QuestSpec(quest_name=quest_name))
        spec = DialogueSpec(
            name=f"d{d}", quest_name=quest_name,
            participants=(Participant("NPC"), Participant("Player", is_player=True)),
        )
        n = rng.randint(2, 5)
        nodes = {
            f"n{i}": UtteranceNode(f"n{i}", "NPC" if i % 2 else "Player", f"t{i}")
            for i in range(n)
        }
        edges = tuple(Edge(f"n{i}", f"n{i+1}") for i in range(n - 1))
        dialogues.append((spec, DialogueTree(nodes=nodes, edges=edges, start_id="n0")))
    corpus = Corpus(tuple(quests), tuple(dialogues))
    report = corpus_stats(corpus)
    # oracle: manual summation
    expected_nodes = sum(len(t.nodes) for _, t in dialogues)
    assert report.num_nodes == expected_nodes
    assert report.mean_quest_statements_per_dialogue == 0.0
    assert report.mean_bio_statements_per_dialogue == 0.0


def test_canonical_json_stable_ordering():
    assert canonical_json({"b": 1, "a": 2}) == '{\n  "a": 2,\n  "b": 1\n}\n'
