from __future__ import annotations

import pytest

from questwriter.model import (
    BiographyPassage,
    DialogueSpec,
    DialogueTree,
    Edge,
    FactRef,
    Objective,
    Participant,
    QuestSpec,
    UtteranceNode,
    statements_from_texts,
)
from questwriter.corpus import Corpus


def make_tree(edges: list[tuple[str, str]], start: str, speakers: dict[str, str] | None = None,
              conditioned: set[tuple[str, str]] | None = None) -> DialogueTree:
    """Build a small tree from edge pairs; node text is synthesized."""
    conditioned = conditioned or set()
    node_ids = {start}
    for a, b in edges:
        node_ids.add(a)
        node_ids.add(b)
    nodes = {
        i: UtteranceNode(id=i, speaker=(speakers or {}).get(i, "Player"), text=f"line {i}")
        for i in sorted(node_ids)
    }
    return DialogueTree(
        nodes=nodes,
        edges=tuple(Edge(a, b, (a, b) in conditioned) for a, b in edges),
        start_id=start,
    )


@pytest.fixture
def salvage_spec() -> DialogueSpec:
    return DialogueSpec(
        name="the_salvage_run_00",
        quest_name="The Salvage Run",
        participants=(Participant("Ilsa Krenn"), Participant("Player", is_player=True)),
        in_objectives=(
            Objective(
                name="Meet the Dockmaster",
                game_log=statements_from_texts(
                    "in/Meet the Dockmaster/log",
                    [
                        "Dockmaster Ilsa Krenn holds the manifest for the wrecked hauler.",
                        "Find her at the Port Caldera quay.",
                    ],
                ),
                walkthrough=statements_from_texts(
                    "in/Meet the Dockmaster/walkthrough",
                    [
                        "Ask Ilsa about the manifest to begin the salvage run.",
                        "She will only trade it for news of her missing crew.",
                    ],
                ),
            ),
        ),
        out_objectives=(
            Objective(
                name="Search the Wreck",
                game_log=statements_from_texts(
                    "out/Search the Wreck/log",
                    [
                        "The hauler Veridian Lark went down in the Glasswater Shallows.",
                        "Search the wreck for the sealed cargo manifest.",
                    ],
                ),
            ),
        ),
        bios=(
            BiographyPassage(
                "Port Caldera",
                statements_from_texts(
                    "bio/Port Caldera",
                    [
                        "Port Caldera is a fog-bound harbor town built on stilts.",
                        "Its economy runs on salvage pulled from the Glasswater Shallows.",
                    ],
                ),
            ),
            BiographyPassage(
                "Ilsa Krenn",
                statements_from_texts(
                    "bio/Ilsa Krenn",
                    [
                        "Ilsa Krenn is the dockmaster of Port Caldera.",
                        "She lost her crew when the Veridian Lark went down.",
                        "Ilsa distrusts salvagers and keeps the manifest locked in her office.",
                    ],
                ),
            ),
        ),
    )


@pytest.fixture
def salvage_tree() -> DialogueTree:
    nodes = {
        "n0": UtteranceNode(
            "n0", "Ilsa Krenn", "You there. Salvager, by the look of those boots.",
            support_facts=(FactRef("bio/Ilsa Krenn", 2),),
        ),
        "n1": UtteranceNode("n1", "Player", "I'm looking for work, if you have any."),
        "n2": UtteranceNode(
            "n2", "Ilsa Krenn",
            "The Veridian Lark went down in the Shallows with my whole crew aboard.",
            support_facts=(FactRef("bio/Ilsa Krenn", 1), FactRef("out/Search the Wreck/log", 0)),
        ),
        "n3": UtteranceNode("n3", "Player", "What's in it for me?"),
        "n4": UtteranceNode(
            "n4", "Ilsa Krenn", "Bring me word of my crew and the manifest is yours.",
            support_facts=(FactRef("in/Meet the Dockmaster/walkthrough", 1),),
        ),
        "n5": UtteranceNode("n5", "Player", "Not my problem, lady."),
    }
    edges = tuple(
        Edge(a, b)
        for a, b in [("n0", "n1"), ("n1", "n2"), ("n2", "n3"), ("n2", "n5"), ("n3", "n4"), ("n4", "n1")]
    )
    return DialogueTree(nodes=nodes, edges=edges, start_id="n0")


@pytest.fixture
def salvage_quest() -> QuestSpec:
    return QuestSpec(
        quest_name="The Salvage Run",
        synopsis=statements_from_texts(
            "synopsis/The Salvage Run",
            ["A wrecked hauler in the Glasswater Shallows still holds its sealed cargo manifest."],
        ),
        synopsis_walkthrough=statements_from_texts(
            "synopsis/The Salvage Run/walkthrough",
            ["Talk to the dockmaster at Port Caldera to take the job."],
        ),
    )


@pytest.fixture
def salvage_corpus(salvage_quest, salvage_spec, salvage_tree) -> Corpus:
    return Corpus(quests=(salvage_quest,), dialogues=((salvage_spec, salvage_tree),))


@pytest.fixture
def cycle_tree() -> DialogueTree:
    # a->b, b->c, a->c, c->b: three edge-simple paths to c, longest [a, c, b, c]
    return make_tree([("a", "b"), ("b", "c"), ("a", "c"), ("c", "b")], start="a")
