"""Seeded synthetic corpora: schema-compatible quests, specs, and gold trees.

The generator fabricates harbor-town quest material (invented names only) so
the pipeline can be exercised end to end without any proprietary game data.
Output is deterministic for a fixed seed and always passes corpus
validation.
"""

from __future__ import annotations

import random

from .corpus import Corpus
from .model import (
    BiographyPassage,
    DialogueSpec,
    DialogueTree,
    Edge,
    FactRef,
    Objective,
    Participant,
    QuestSpec,
    Statement,
    UtteranceNode,
)

__all__ = ["make_synthetic_corpus", "make_synthetic_dialogue"]

_PEOPLE = (
    "Mira Vosk", "Odran Pike", "Tessa Quill", "Bram Hollis", "Senna Rhee",
    "Doc Fenwick", "Jorun Ambry", "Petra Lane", "Calder Wick", "Isolde Marr",
)
_PLACES = (
    "Brackwater", "Hollowmere", "Cinder Quay", "Larkspur Landing", "Gablewick",
    "the Saltflat Exchange", "Wreckers' Row", "the Lantern Walk",
)
_CREATURES = ("glimmer moths", "bog striders", "shale wolves", "reef leeches")
_OBJECTS = ("ledger", "signal lamp", "cargo seal", "tide chart", "ration crate", "brass key")
_QUEST_NOUNS = ("Debt", "Errand", "Bargain", "Crossing", "Inventory", "Signal", "Detour", "Manifest")
_QUEST_ADJ = ("Lantern", "Saltbound", "Hollow", "Quiet", "Borrowed", "Crooked", "Low-Tide", "Unsigned")

_NPC_LINES = (
    "You picked a poor night to come asking about the {obj}.",
    "The {place} crowd will not talk unless you bring the {obj}.",
    "I counted the crates twice; one {obj} is missing.",
    "Stay off the flats after dark, the {creature} swarm there.",
    "Bring word to {person} before the tide turns.",
    "The {obj} stays with me until the debt is cleared.",
)
_PLAYER_LINES = (
    "Tell me what happened to the {obj}.",
    "Why should I trust anyone at {place}?",
    "I can handle a few {creature}.",
    "Who is {person} to you?",
    "Fine. What do you need from me?",
    "That is not what I heard at {place}.",
)


def _pick(rng: random.Random, options: tuple[str, ...]) -> str:
    return options[rng.randrange(len(options))]


def _sentence(rng: random.Random, template: str, cast: dict[str, str]) -> str:
    return template.format(
        obj=cast["obj"], place=cast["place"], creature=cast["creature"], person=cast["person"]
    )


def _statements(source: str, texts: list[str]) -> tuple[Statement, ...]:
    return tuple(Statement(source, i, t) for i, t in enumerate(texts))


def _bio_passage(rng: random.Random, entity: str, cast: dict[str, str]) -> BiographyPassage:
    templates = (
        f"{entity} has worked the {cast['place']} docks for twenty years.",
        f"{entity} keeps a {cast['obj']} hidden behind the counter.",
        f"{entity} owes money to half of {cast['place']} and likes it that way.",
        f"{entity} once chased {cast['creature']} off a grounded barge alone.",
        f"Few at {cast['place']} will cross {entity} openly.",
    )
    count = rng.randint(2, len(templates))
    order = list(templates)
    rng.shuffle(order)
    return BiographyPassage(entity, _statements(f"bio/{entity}", order[:count]))


def _place_passage(rng: random.Random, place: str, cast: dict[str, str]) -> BiographyPassage:
    templates = (
        f"{place} is a tide-locked trading post strung with rope bridges.",
        f"Smugglers use {place} to move {cast['obj']}s past the levy clerks.",
        f"{place} floods every spring, and every spring it is rebuilt.",
        f"The {cast['creature']} nesting under {place} glow before a storm.",
    )
    count = rng.randint(2, len(templates))
    order = list(templates)
    rng.shuffle(order)
    return BiographyPassage(place, _statements(f"bio/{place}", order[:count]))


def _objective(rng: random.Random, name: str, cast: dict[str, str], walkthrough: bool) -> Objective:
    log_texts = [
        f"{cast['person']} wants the {cast['obj']} recovered before the next tide.",
    ]
    if rng.random() < 0.5:
        log_texts.append(f"The trail starts at {cast['place']}.")
    walk_texts = []
    if walkthrough:
        walk_texts = [
            f"Speak with {cast['person']} near {cast['place']} to take the job.",
            f"Expect {cast['creature']} along the flats on the way out.",
        ][: rng.randint(1, 2)]
    return Objective(
        name=name,
        game_log=_statements(f"in/{name}/log", log_texts),
        walkthrough=_statements(f"in/{name}/walkthrough", walk_texts),
    )


def make_synthetic_dialogue(
    rng: random.Random,
    quest: QuestSpec,
    dialogue_index: int,
    cast: dict[str, str],
    npc: str,
    extra_entities: tuple[str, ...],
) -> tuple[DialogueSpec, DialogueTree]:
    in_objective = _objective(rng, f"{quest.quest_name} step {dialogue_index + 1}", cast, True)
    out_name = f"{quest.quest_name} step {dialogue_index + 2}"
    out_objective = Objective(
        name=out_name,
        game_log=_statements(
            f"out/{out_name}/log",
            [f"Report back once the {cast['obj']} is accounted for."],
        ),
    )
    bios = [_bio_passage(rng, npc, cast)]
    for entity in extra_entities:
        bios.append(_place_passage(rng, entity, cast))
    spec = DialogueSpec(
        name=f"{quest.quest_name.lower().replace(' ', '_')}_{dialogue_index:02d}",
        quest_name=quest.quest_name,
        participants=(Participant(npc), Participant("Player", is_player=True)),
        in_objectives=(in_objective,),
        out_objectives=(out_objective,),
        bios=tuple(bios),
    )

    fact_pool = spec.all_statements()
    length = rng.randint(4, 8)
    nodes: dict[str, UtteranceNode] = {}
    edges: list[Edge] = []
    for i in range(length):
        speaker = npc if i % 2 == 0 else "Player"
        templates = _NPC_LINES if speaker == npc else _PLAYER_LINES
        text = _sentence(rng, _pick(rng, templates), cast) + f" ({spec.name} {i})"
        facts: tuple[FactRef, ...] = ()
        if speaker == npc and rng.random() < 0.7:
            chosen = rng.sample(range(len(fact_pool)), rng.randint(1, 2))
            facts = tuple(FactRef(fact_pool[j].source, fact_pool[j].index) for j in sorted(chosen))
        node_id = f"n{i:02d}"
        nodes[node_id] = UtteranceNode(node_id, speaker, text, support_facts=facts)
        if i:
            edges.append(Edge(f"n{i-1:02d}", node_id))
    # an optional player-choice branch off one NPC node
    if length >= 4 and rng.random() < 0.6:
        parent = f"n{rng.randrange(0, length - 1, 2):02d}"
        node_id = f"n{length:02d}"
        text = _sentence(rng, _pick(rng, _PLAYER_LINES), cast) + f" ({spec.name} alt)"
        nodes[node_id] = UtteranceNode(node_id, "Player", text)
        edges.append(Edge(parent, node_id))
    # an occasional cycle back to an earlier node with a different speaker
    if rng.random() < 0.4:
        later = rng.randrange(2, length)
        earlier = rng.randrange(0, later)
        frm, to = f"n{later:02d}", f"n{earlier:02d}"
        if nodes[frm].speaker != nodes[to].speaker and (frm, to) not in {e.key for e in edges}:
            edges.append(Edge(frm, to))
    return spec, DialogueTree(nodes=nodes, edges=tuple(edges), start_id="n00")


def make_synthetic_corpus(
    num_quests: int = 45,
    dialogues_per_quest: int = 1,
    seed: int = 0,
) -> Corpus:
    """A deterministic synthetic corpus with valid trees and annotations."""
    rng = random.Random(seed)
    quests: list[QuestSpec] = []
    dialogues: list[tuple[DialogueSpec, DialogueTree]] = []
    used_names: set[str] = set()
    for q in range(num_quests):
        adjective = _QUEST_ADJ[q % len(_QUEST_ADJ)]
        noun = _QUEST_NOUNS[(q // len(_QUEST_ADJ)) % len(_QUEST_NOUNS)]
        quest_name = f"The {adjective} {noun}"
        if quest_name in used_names:
            quest_name = f"{quest_name} {q}"
        used_names.add(quest_name)
        cast = {
            "person": _pick(rng, _PEOPLE),
            "place": _pick(rng, _PLACES),
            "creature": _pick(rng, _CREATURES),
            "obj": _pick(rng, _OBJECTS),
        }
        quest = QuestSpec(
            quest_name=quest_name,
            synopsis=_statements(
                f"synopsis/{quest_name}",
                [
                    f"{cast['person']} needs a missing {cast['obj']} found before it ruins them.",
                    f"The search begins at {cast['place']}.",
                ],
            ),
            synopsis_walkthrough=_statements(
                f"synopsis/{quest_name}/walkthrough",
                [f"Find {cast['person']} and agree to take the job."],
            ),
        )
        quests.append(quest)
        npc = cast["person"]
        extras = tuple({cast["place"].removeprefix("the ").strip()} - {npc})
        for d in range(dialogues_per_quest):
            dialogues.append(
                make_synthetic_dialogue(rng, quest, d, cast, npc, extras)
            )
    return Corpus(tuple(quests), tuple(dialogues))
