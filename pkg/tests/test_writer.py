from __future__ import annotations

import json

import httpx
import pytest

from questwriter.corpus import canonical_json
from questwriter.linearize import GenerationTask, check_history, linearize
from questwriter.model import FactRef, UtteranceNode, ORIGIN_COMMITTED, ORIGIN_UNCOMMITTED
from questwriter.prompting import PromptConfig
from questwriter.writer import (
    BackendError,
    CompletionParams,
    CompletionParseError,
    ExternalChoicePolicy,
    HTTPBackend,
    MockBackend,
    SeededRandomPolicy,
    default_expected_speaker,
    generate_candidates,
    generate_spine,
    parse_completion,
)


def _task(spec, tree, most_recent="n1") -> GenerationTask:
    return GenerationTask(
        spec=spec,
        subtree=tree,
        most_recent=most_recent,
        history=linearize(tree, most_recent),
    )


# ---------------------------------------------------------------------------
# parse_completion
# ---------------------------------------------------------------------------


def test_parse_plain_utterance(salvage_spec):
    candidate = parse_completion("> Ilsa Krenn: Oh, thank you!", salvage_spec)
    assert (candidate.speaker, candidate.text) == ("Ilsa Krenn", "Oh, thank you!")
    assert candidate.selected_facts == ()


def test_parse_discards_after_blank_line(salvage_spec):
    raw = "> Ilsa Krenn: Hello.\n\n> Player: leftover"
    candidate = parse_completion(raw, salvage_spec)
    assert candidate.text == "Hello."


def test_parse_ks_fact_lines_resolved(salvage_spec):
    raw = (
        "Ilsa Krenn fact: She lost her crew when the Veridian Lark went down.\n"
        "Meet the Dockmaster fact: Find her at the Port Caldera quay.\n"
        "utterance: > Ilsa Krenn: The Lark is gone, and my crew with her."
    )
    candidate = parse_completion(raw, salvage_spec, ks_mode=True)
    assert candidate.selected_facts == (
        FactRef("bio/Ilsa Krenn", 1),
        FactRef("in/Meet the Dockmaster/log", 1),
    )


def test_parse_ks_unresolvable_fact_kept_raw(salvage_spec):
    raw = "Ilsa Krenn fact: a sentence nobody wrote\n> Ilsa Krenn: Hm."
    candidate = parse_completion(raw, salvage_spec, ks_mode=True)
    assert candidate.selected_facts == ("Ilsa Krenn fact: a sentence nobody wrote",)


def test_parse_speaker_recovery_with_warning(salvage_spec):
    candidate = parse_completion(
        "> Ghost: Boo.", salvage_spec, expected_speaker="Ilsa Krenn"
    )
    assert candidate.speaker == "Ilsa Krenn"
    assert candidate.warnings


def test_parse_unknown_speaker_without_recovery(salvage_spec):
    with pytest.raises(CompletionParseError):
        parse_completion("> Ghost: Boo.", salvage_spec)


def test_parse_garbage_rejected(salvage_spec):
    with pytest.raises(CompletionParseError):
        parse_completion("garbage with no marker", salvage_spec)


def test_default_expected_speaker_alternates(salvage_spec):
    assert default_expected_speaker(salvage_spec, "Player") == "Ilsa Krenn"
    assert default_expected_speaker(salvage_spec, "Ilsa Krenn") == "Player"


# ---------------------------------------------------------------------------
# generate_candidates
# ---------------------------------------------------------------------------


def test_generate_candidates_scripted_mock(salvage_spec, salvage_tree):
    backend = MockBackend(script=["> Ilsa Krenn: A scripted reply."])
    task = _task(salvage_spec, salvage_tree)
    _, candidates = generate_candidates(
        task, PromptConfig(mode="full", allow_few_shot=False), 3, backend
    )
    assert len(candidates) == 3
    assert {c.text for c in candidates} == {"A scripted reply."}


def test_generate_candidates_ks_carries_facts(salvage_spec, salvage_tree):
    backend = MockBackend(seed=5)
    task = _task(salvage_spec, salvage_tree)
    _, candidates = generate_candidates(
        task, PromptConfig(mode="ks", allow_few_shot=False), 1, backend
    )
    (candidate,) = candidates
    assert candidate.selected_facts
    assert all(isinstance(f, FactRef) for f in candidate.selected_facts)
    # the echoed fact resolves back into the spec's statement pool
    from questwriter.model import resolve_fact

    resolve_fact(salvage_spec, candidate.selected_facts[0])


def test_generate_candidates_zero_parseable(salvage_spec, salvage_tree):
    backend = MockBackend(script=["garbage with no marker"])
    task = _task(salvage_spec, salvage_tree)
    with pytest.raises(CompletionParseError):
        generate_candidates(task, PromptConfig(mode="full", allow_few_shot=False), 2, backend)


def test_generate_candidates_retry_recovers(salvage_spec, salvage_tree):
    backend = MockBackend(script=["garbage", "> Ilsa Krenn: Recovered."])
    task = _task(salvage_spec, salvage_tree)
    _, candidates = generate_candidates(
        task, PromptConfig(mode="full", allow_few_shot=False), 1, backend
    )
    assert candidates[0].text == "Recovered."


# ---------------------------------------------------------------------------
# spine growth
# ---------------------------------------------------------------------------


def _start_node(salvage_tree) -> UtteranceNode:
    return salvage_tree.nodes["n0"]


def test_spine_one_round_arithmetic(salvage_spec, salvage_tree):
    result = generate_spine(
        salvage_spec,
        _start_node(salvage_tree),
        rounds=1,
        k=3,
        config=PromptConfig(mode="full", allow_few_shot=False),
        policy=SeededRandomPolicy(0),
        backend=MockBackend(),
    )
    assert len(result.tree.nodes) == 4
    assert len(result.committed_path) == 2
    assert result.complete


def test_spine_31_nodes(salvage_spec, salvage_tree):
    result = generate_spine(
        salvage_spec,
        _start_node(salvage_tree),
        rounds=10,
        k=3,
        config=PromptConfig(mode="full", allow_few_shot=False),
        policy=SeededRandomPolicy(7),
        backend=MockBackend(seed=7),
    )
    assert len(result.tree.nodes) == 31
    assert len(result.committed_path) == 11
    assert result.rounds == 10
    # every candidate hangs off the previous committed node
    for round_index, ids in enumerate(result.round_candidates):
        parent = result.committed_path[round_index]
        for node_id in ids:
            assert (parent, node_id) in result.tree.edge_keys()
    # committed path is a valid history in the grown tree
    from questwriter.linearize import History

    assert check_history(result.tree, History(result.committed_path)) == []
    committed_origins = {result.tree.nodes[i].origin for i in result.committed_path[1:]}
    assert committed_origins == {ORIGIN_COMMITTED}
    uncommitted = [
        n for n in result.tree.nodes.values() if n.origin == ORIGIN_UNCOMMITTED
    ]
    assert len(uncommitted) == 20


def test_spine_reproducible_with_seeds(salvage_spec, salvage_tree):
    def run():
        result = generate_spine(
            salvage_spec,
            _start_node(salvage_tree),
            rounds=4,
            k=3,
            config=PromptConfig(mode="ks", allow_few_shot=False),
            policy=SeededRandomPolicy(11),
            backend=MockBackend(seed=11),
        )
        from questwriter.corpus import _tree_to_dict

        return canonical_json(_tree_to_dict(result.tree))

    assert run() == run()


def test_spine_external_choice_policy(salvage_spec, salvage_tree):
    picks: list[tuple[int, tuple[str, ...]]] = []

    def choose(round_index, ids):
        picks.append((round_index, tuple(ids)))
        return ids[0]

    result = generate_spine(
        salvage_spec,
        _start_node(salvage_tree),
        rounds=2,
        k=2,
        config=PromptConfig(mode="full", allow_few_shot=False),
        policy=ExternalChoicePolicy(choose),
        backend=MockBackend(),
    )
    assert [r for r, _ in picks] == [1, 2]
    assert result.committed_path == (result.tree.start_id, "r01c1", "r02c1")


def test_spine_partial_on_dead_backend(salvage_spec, salvage_tree):
    backend = MockBackend(script=["nope"])
    result = generate_spine(
        salvage_spec,
        _start_node(salvage_tree),
        rounds=3,
        k=2,
        config=PromptConfig(mode="full", allow_few_shot=False),
        policy=SeededRandomPolicy(0),
        backend=backend,
    )
    assert not result.complete
    assert result.rounds == 0
    assert len(result.tree.nodes) == 1


def test_spine_policy_must_choose_candidate(salvage_spec, salvage_tree):
    policy = ExternalChoicePolicy(lambda r, ids: "bogus")
    with pytest.raises(ValueError):
        generate_spine(
            salvage_spec,
            _start_node(salvage_tree),
            rounds=1,
            k=2,
            config=PromptConfig(mode="full", allow_few_shot=False),
            policy=policy,
            backend=MockBackend(),
        )


# ---------------------------------------------------------------------------
# HTTP backend
# ---------------------------------------------------------------------------


def test_http_backend_success_and_payload():
    seen = {}

    def handler(request: httpx.Request) -> httpx.Response:
        seen.update(json.loads(request.content))
        return httpx.Response(200, json={"choices": [{"text": "> A: ok"}]})

    backend = HTTPBackend(
        "http://lm.test/v1", api_key="k", model="m", transport=httpx.MockTransport(handler)
    )
    out = backend.complete("PROMPT", CompletionParams(max_tokens=5, temperature=0.0))
    assert out == "> A: ok"
    assert seen["prompt"] == "PROMPT"
    assert seen["model"] == "m"
    assert seen["max_tokens"] == 5
    assert seen["stop"] == ["\n\n"]


def test_http_backend_retries_transport_error_once():
    calls = {"n": 0}

    def handler(request: httpx.Request) -> httpx.Response:
        calls["n"] += 1
        if calls["n"] == 1:
            raise httpx.ConnectError("boom", request=request)
        return httpx.Response(200, json={"choices": [{"text": "ok"}]})

    backend = HTTPBackend("http://lm.test", backoff=0.0, transport=httpx.MockTransport(handler))
    assert backend.complete("p", CompletionParams()) == "ok"
    assert calls["n"] == 2


def test_http_backend_fails_after_retry():
    def handler(request: httpx.Request) -> httpx.Response:
        return httpx.Response(503)

    backend = HTTPBackend("http://lm.test", backoff=0.0, transport=httpx.MockTransport(handler))
    with pytest.raises(BackendError):
        backend.complete("p", CompletionParams())


def test_http_backend_client_error_not_retried():
    calls = {"n": 0}

    def handler(request: httpx.Request) -> httpx.Response:
        calls["n"] += 1
        return httpx.Response(401, text="no")

    backend = HTTPBackend("http://lm.test", backoff=0.0, transport=httpx.MockTransport(handler))
    with pytest.raises(BackendError):
        backend.complete("p", CompletionParams())
    assert calls["n"] == 1
