from __future__ import annotations

import math
import random

import pytest

from questwriter.evaluation import (
    JudgmentRecord,
    MetricReport,
    annotation_agreement,
    bleu4,
    bootstrap_ci,
    corpus_bleu4,
    evaluate_nup,
    likert_aggregate,
    load_judgments,
    pairwise_winrates,
    reference_sets_for,
    render_report_table,
)
from questwriter.linearize import GenerationTask, linearize
from questwriter.model import FactRef


def _task(spec, tree, target="n2", most_recent="n1") -> GenerationTask:
    return GenerationTask(
        spec=spec,
        subtree=tree,
        most_recent=most_recent,
        history=linearize(tree, most_recent),
        gold_target=tree.nodes[target],
        gold_facts=tree.nodes[target].support_facts,
    )


# ---------------------------------------------------------------------------
# BLEU
# ---------------------------------------------------------------------------


def test_bleu_identity_candidate():
    refs = ["the lighthouse keeper waved to the boats", "another reference entirely"]
    assert bleu4(refs[0], refs) == pytest.approx(1.0, abs=1e-12)


def test_bleu_zero_four_gram_unsmoothed():
    assert bleu4("a b c d", ["a b x y"], smooth=False) == 0.0


def test_bleu_hand_derived_smoothed():
    # frozen from a by-hand evaluation of clipped precisions and brevity:
    # p1=2/4, p2=1/3, p3=p4=1e-9, bp=1
    assert bleu4("a b c d", ["a b x y"], smooth=True) == pytest.approx(
        2.0205155046766242e-05, abs=1e-9
    )


def test_bleu_short_candidate_smoothing():
    # p1=p2=p3=1, p4 has zero possible; frozen by-hand value
    value = bleu4("the cat sat", ["the cat sat on the mat", "a cat sat"], smooth=True)
    assert value == pytest.approx(0.005623413251903492, abs=1e-9)


def test_bleu_empty_candidate_and_refs():
    assert bleu4("", ["anything"]) == 0.0
    with pytest.raises(ValueError):
        bleu4("text", [])


def test_bleu_reference_permutation_symmetry():
    refs = ["alpha beta gamma delta", "delta gamma beta alpha", "beta beta beta beta"]
    cand = "alpha beta gamma epsilon"
    scores = {bleu4(cand, list(p), smooth=True) for p in (refs, refs[::-1], [refs[1], refs[0], refs[2]])}
    assert len(scores) == 1


def test_bleu_adding_identical_reference_never_decreases():
    rng = random.Random(3)
    words = "tide dock rope lamp crate gull".split()
    for _ in range(50):
        cand = " ".join(rng.choice(words) for _ in range(rng.randint(1, 8)))
        refs = [" ".join(rng.choice(words) for _ in range(rng.randint(1, 8)))]
        before = bleu4(cand, refs, smooth=True)
        after = bleu4(cand, refs + [cand], smooth=True)
        assert after >= before - 1e-15
        if len(cand.split()) >= 4:  # shorter candidates have no 4-grams at all
            assert after == pytest.approx(1.0, abs=1e-12)


def test_corpus_bleu_identity_pairs():
    pairs = [("a b c d e", ["a b c d e"]), ("x y z w", ["x y z w"])]
    assert corpus_bleu4(pairs) == pytest.approx(1.0, abs=1e-12)
    assert corpus_bleu4([("a b c d", ["a b x y"])]) == 0.0


# ---------------------------------------------------------------------------
# evaluate_nup
# ---------------------------------------------------------------------------


def test_evaluate_nup_gold_identity(salvage_spec, salvage_tree):
    task = _task(salvage_spec, salvage_tree)
    report = evaluate_nup([(task, task.gold_target.text)])
    assert report.n == 1
    assert report.items[0].bleu_gold == pytest.approx(1.0, abs=1e-12)
    assert report.items[0].semantic is None
    assert "semantic" not in report.corpus


def test_evaluate_nup_means_match_hand_average(salvage_spec, salvage_tree):
    task_a = _task(salvage_spec, salvage_tree, target="n2", most_recent="n1")
    task_b = _task(salvage_spec, salvage_tree, target="n4", most_recent="n3")
    results = [(task_a, "The Veridian Lark went down."), (task_b, "Bring me word of my crew.")]
    report = evaluate_nup(results)
    per_item = [item.bleu_gold for item in report.items]
    assert report.corpus["bleu_gold"]["mean"] == pytest.approx(sum(per_item) / 2, abs=1e-12)


def test_evaluate_nup_external_scorer_and_failures(salvage_spec, salvage_tree):
    task = _task(salvage_spec, salvage_tree)

    calls = {"n": 0}

    def scorer(candidate, references):
        calls["n"] += 1
        if calls["n"] == 2:
            raise ConnectionError("scorer offline")
        return 0.5

    report = evaluate_nup([(task, "one"), (task, "two"), (task, "three")], external_scorer=scorer)
    semantics = [item.semantic for item in report.items]
    assert semantics == [0.5, None, 0.5]
    assert len(report.scorer_errors) == 1
    assert "semantic" in report.corpus


def test_evaluate_nup_json_deterministic(salvage_spec, salvage_tree):
    task = _task(salvage_spec, salvage_tree)
    results = [(task, "Some candidate text.")]
    assert evaluate_nup(results, seed=4).to_json() == evaluate_nup(results, seed=4).to_json()


def test_reference_sets_cover_spec(salvage_spec, salvage_tree):
    refs = reference_sets_for(_task(salvage_spec, salvage_tree))
    assert len(refs.gold) == 1
    assert len(refs.quest) == 6
    assert len(refs.bio) == 5


# ---------------------------------------------------------------------------
# bootstrap
# ---------------------------------------------------------------------------


def test_bootstrap_zero_variance():
    assert bootstrap_ci([5.0, 5.0, 5.0], 200, 0.95, 1) == (5.0, 5.0, 5.0)


def test_bootstrap_deterministic():
    scores = [0.1, 0.4, 0.9, 0.3]
    assert bootstrap_ci(scores, 500, 0.9, 13) == bootstrap_ci(scores, 500, 0.9, 13)


def test_bootstrap_matches_independent_reimplementation():
    scores = [0.0, 1.0]
    resamples, level, seed = 10_000, 0.95, 21
    mean, lo, hi = bootstrap_ci(scores, resamples, level, seed)

    # straightforward second implementation of the documented protocol
    rng = random.Random(seed)
    n = len(scores)
    means = sorted(
        math.fsum(scores[rng.randrange(n)] for _ in range(n)) / n for _ in range(resamples)
    )
    alpha = 1.0 - level
    expected_lo = means[int(math.floor(alpha / 2 * (resamples - 1)))]
    expected_hi = means[int(math.ceil((1.0 - alpha / 2) * (resamples - 1)))]
    assert mean == pytest.approx(0.5, abs=1e-12)
    assert lo == pytest.approx(expected_lo, abs=1e-12)
    assert hi == pytest.approx(expected_hi, abs=1e-12)


def test_bootstrap_rejects_bad_input():
    with pytest.raises(ValueError):
        bootstrap_ci([], 10, 0.9, 0)
    with pytest.raises(ValueError):
        bootstrap_ci([1.0], 10, 1.5, 0)


def test_bootstrap_ordering_property():
    rng = random.Random(8)
    for _ in range(20):
        scores = [rng.random() for _ in range(rng.randint(1, 30))]
        mean, lo, hi = bootstrap_ci(scores, 300, 0.9, rng.randrange(1000))
        assert lo <= mean + 1e-12
        assert mean <= hi + 1e-12


# ---------------------------------------------------------------------------
# judgments
# ---------------------------------------------------------------------------


def test_likert_mean():
    records = [JudgmentRecord("i", "coherence", score=s) for s in (4, 4, 2, 2)]
    table = likert_aggregate(records)
    assert table["coherence"]["mean"] == 3.0
    assert table["coherence"]["n"] == 4


def test_likert_single_record_degenerate_ci():
    table = likert_aggregate([JudgmentRecord("i", "bio_usage", score=2)])
    assert table["bio_usage"] == {"mean": 2.0, "lo": 2.0, "hi": 2.0, "n": 1}


def test_likert_fixture_table_matches_manual_means():
    rows = [("coherence", 3), ("coherence", 4), ("quest_usage", 1), ("quest_usage", 4), ("quest_usage", 4)]
    records = [JudgmentRecord(f"i{i}", c, score=s) for i, (c, s) in enumerate(rows)]
    table = likert_aggregate(records)
    assert table["coherence"]["mean"] == pytest.approx(3.5)
    assert table["quest_usage"]["mean"] == pytest.approx(3.0)


def test_likert_rejects_mixed_kinds():
    records = [
        JudgmentRecord("i", "coherence", score=3),
        JudgmentRecord("i", "coherence", system_a="x", system_b="y", winner="a"),
    ]
    with pytest.raises(ValueError):
        likert_aggregate(records)


def _pairwise(system_a: str, system_b: str, criterion: str, wins_a: int, total: int):
    records = []
    for i in range(total):
        winner = "a" if i < wins_a else "b"
        records.append(
            JudgmentRecord(f"i{i}", criterion, system_a=system_a, system_b=system_b, winner=winner)
        )
    return records


def test_winrate_table_formatting():
    records = (
        _pairwise("icl", "other", "coherence", 13, 16)
        + _pairwise("icl", "other", "nonviolation", 12, 16)
        + _pairwise("icl", "other", "bio_usage", 0, 16)
    )
    table = pairwise_winrates(records)
    assert table["icl"]["coherence"] == 81.2
    assert table["icl"]["nonviolation"] == 75.0
    assert table["icl"]["bio_usage"] == 0.0
    assert table["other"]["coherence"] == 18.8


def test_winrates_sum_to_100_without_ties():
    records = _pairwise("s1", "s2", "engagingness", 5, 9)
    table = pairwise_winrates(records)
    assert table["s1"]["engagingness"] + table["s2"]["engagingness"] == pytest.approx(100.0, abs=0.11)


def test_winrates_ties_excluded_and_empty_cells_absent():
    records = [
        JudgmentRecord("i0", "coherence", system_a="s1", system_b="s2", winner="tie"),
        JudgmentRecord("i1", "coherence", system_a="s1", system_b="s2", winner="a"),
    ]
    table = pairwise_winrates(records)
    assert table["s1"]["coherence"] == 100.0
    assert "engagingness" not in table["s1"]
    assert pairwise_winrates(
        [JudgmentRecord("i", "coherence", system_a="x", system_b="y", winner="tie")]
    ) == {}


def test_judgment_record_validation():
    with pytest.raises(ValueError):
        JudgmentRecord("i", "coherence", score=5)
    with pytest.raises(ValueError):
        JudgmentRecord("i", "novelty", score=3)
    with pytest.raises(ValueError):
        JudgmentRecord("i", "coherence", winner="c", system_a="x", system_b="y")


# ---------------------------------------------------------------------------
# agreement
# ---------------------------------------------------------------------------


def _refs(*pairs) -> set[FactRef]:
    return {FactRef(s, i) for s, i in pairs}


def test_agreement_identical_maps():
    a = {"n0": _refs(("q", 1), ("q", 2)), "n1": set()}
    assert annotation_agreement(a, {k: set(v) for k, v in a.items()}) == {
        "em_avg": 1.0,
        "jaccard_avg": 1.0,
    }


def test_agreement_partial_overlap():
    a = {"n0": _refs(("q", 1), ("q", 2))}
    b = {"n0": _refs(("q", 2), ("q", 3))}
    result = annotation_agreement(a, b)
    assert result["em_avg"] == 0.0
    assert result["jaccard_avg"] == pytest.approx(1 / 3, abs=1e-12)


def test_agreement_three_node_hand_computation():
    a = {"n0": _refs(("q", 0)), "n1": _refs(("b", 0), ("b", 1)), "n2": set()}
    b = {"n0": _refs(("q", 0)), "n1": _refs(("b", 1)), "n2": set()}
    result = annotation_agreement(a, b)
    # by hand: EM = (1 + 0 + 1)/3; Jaccard = (1 + 1/2 + 1)/3
    assert result["em_avg"] == pytest.approx(2 / 3, abs=1e-12)
    assert result["jaccard_avg"] == pytest.approx((1 + 0.5 + 1) / 3, abs=1e-12)


def test_agreement_key_mismatch():
    with pytest.raises(KeyError):
        annotation_agreement({"n0": set()}, {"n1": set()})


# ---------------------------------------------------------------------------
# ingestion and rendering
# ---------------------------------------------------------------------------


def test_load_judgments_json_and_csv(tmp_path):
    json_path = tmp_path / "records.json"
    json_path.write_text(
        '[{"item": "i0", "criterion": "coherence", "score": 3},'
        ' {"item": "i1", "criterion": "bio_usage", "system_a": "x", "system_b": "y", "winner": "b"}]'
    )
    records = load_judgments(json_path)
    assert records[0].is_likert and records[1].winner == "b"

    csv_path = tmp_path / "records.csv"
    csv_path.write_text(
        "item,criterion,score,system_a,system_b,winner\n"
        "i0,coherence,4,,,\n"
        "i1,quest_usage,,x,y,a\n"
    )
    records = load_judgments(csv_path)
    assert records[0].score == 4
    assert records[1].system_a == "x"


def test_render_report_table(salvage_spec, salvage_tree):
    task = _task(salvage_spec, salvage_tree)
    report = evaluate_nup([(task, task.gold_target.text)])
    table = render_report_table(report)
    assert "bleu_gold" in table
    assert table.splitlines()[-1] == "items: 1"
