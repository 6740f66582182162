"""Command-line entry points for every pipeline stage.

Exit codes: 0 success, 1 validation findings, 2 usage or input error.
All structured output is canonical JSON on stdout; --out redirects it to a
file. With --json-errors, failures are additionally reported as one JSON
object on stderr. Every command taking --seed is byte-deterministic.
"""

from __future__ import annotations

import argparse
import json
import sys
import zlib
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Sequence

from .corpus import (
    Corpus,
    canonical_json,
    corpus_stats,
    corpus_to_dict,
    dump_corpus,
    load_corpus,
    split_by_quests,
    validate_corpus,
)
from .evaluation import annotation_agreement, evaluate_nup, render_report_table
from .linearize import GenerationTask, History, build_nup_items, linearize
from .model import FactRef, QuestSpec, SchemaError
from .prompting import PromptConfig, build_exemplar_pool, build_icl_prompt
from .writer import (
    HTTPBackend,
    LMBackend,
    MockBackend,
    SeededRandomPolicy,
    generate_candidates,
    generate_spine,
)

__all__ = ["main", "build_parser"]


class CliError(Exception):
    """Input or usage failure; maps to exit code 2."""


def _emit(args: argparse.Namespace, text: str) -> None:
    if getattr(args, "out", None):
        Path(args.out).write_text(text, encoding="utf-8", newline="\n")
    else:
        sys.stdout.write(text)


def _load(path: str) -> Corpus:
    try:
        return load_corpus(path)
    except FileNotFoundError:
        raise CliError(f"no such file: {path}")
    except (SchemaError, KeyError, ValueError) as exc:
        raise CliError(f"failed to parse corpus {path}: {exc}")


def _find_dialogue(corpus: Corpus, name: str):
    for spec, tree in corpus.dialogues:
        if spec.name == name:
            return spec, tree
    raise CliError(f"no dialogue named {name!r} in corpus")


def _make_backend(args: argparse.Namespace) -> LMBackend:
    if args.backend == "mock":
        return MockBackend(seed=getattr(args, "seed", 0))
    return HTTPBackend.from_env()


def _derive_seed(seed: int, tag: str) -> int:
    return zlib.crc32(f"{seed}:{tag}".encode("utf-8"))


def _exemplar_context(corpus: Corpus, args: argparse.Namespace):
    """(index, pool) for few-shot prompts: the train split when assigned."""
    if not getattr(args, "few_shot", True):
        return None, ()
    split = "train" if corpus.split_assignment else None
    return build_exemplar_pool(corpus, split=split)


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------


def _cmd_validate(args: argparse.Namespace) -> int:
    corpus = _load(args.corpus)
    report = validate_corpus(corpus)
    payload = {
        "ok": report.ok,
        "findings": [
            {"code": f.code, "message": f.message, "subject": f.subject, "severity": f.severity}
            for f in report.findings
        ],
    }
    _emit(args, canonical_json(payload))
    return 0 if report.ok else 1


def _cmd_stats(args: argparse.Namespace) -> int:
    corpus = _load(args.corpus)
    _emit(args, canonical_json(corpus_stats(corpus).to_dict()))
    return 0


def _cmd_split(args: argparse.Namespace) -> int:
    corpus = _load(args.corpus)
    try:
        assigned = split_by_quests(corpus, (args.train, args.dev, args.test), args.seed)
    except SchemaError as exc:
        raise CliError(str(exc))
    _emit(args, dump_corpus(assigned))
    return 0


def _cmd_linearize(args: argparse.Namespace) -> int:
    corpus = _load(args.corpus)
    spec, tree = _find_dialogue(corpus, args.dialogue)
    if args.node not in tree.nodes:
        raise CliError(f"no node {args.node!r} in dialogue {args.dialogue!r}")
    history = linearize(tree, args.node, args.budget)
    payload = {"history": list(history.node_ids), "budget_truncated": history.budget_truncated}
    _emit(args, canonical_json(payload))
    return 0


def _task_for_node(spec, tree, node: str) -> GenerationTask:
    gold = tree.nodes.get(node)
    return GenerationTask(
        spec=spec,
        subtree=tree,
        most_recent=node,
        history=linearize(tree, node),
        gold_target=None,
        gold_facts=gold.support_facts if gold else None,
    )


def _cmd_prompt(args: argparse.Namespace) -> int:
    corpus = _load(args.corpus)
    spec, tree = _find_dialogue(corpus, args.dialogue)
    if args.node not in tree.nodes:
        raise CliError(f"no node {args.node!r} in dialogue {args.dialogue!r}")
    index, pool = _exemplar_context(corpus, args)
    config = PromptConfig(
        mode=args.mode, token_budget=args.budget, allow_few_shot=args.few_shot, seed=args.seed
    )
    task = _task_for_node(spec, tree, args.node)
    prompt = build_icl_prompt(task, config, index, pool)
    payload = {
        "text": prompt.text,
        "token_count": prompt.token_count,
        "num_exemplars": prompt.num_exemplars,
        "truncated": prompt.truncated,
        "partial_leading_exemplar": prompt.partial_leading_exemplar,
    }
    _emit(args, canonical_json(payload))
    return 0


def _cmd_nup(args: argparse.Namespace) -> int:
    corpus = _load(args.corpus)
    if args.split == "all" or corpus.split_assignment is None:
        dialogues = corpus.dialogues
    else:
        dialogues = corpus.dialogues_for_split(args.split)
    if not dialogues:
        raise CliError(f"no dialogues in split {args.split!r}")
    index, pool = _exemplar_context(corpus, args)
    config = PromptConfig(
        mode=args.mode, token_budget=args.budget, allow_few_shot=args.few_shot, seed=args.seed
    )

    work: list[tuple[str, GenerationTask]] = []
    for spec, tree in dialogues:
        tasks = build_nup_items(tree, spec, variants_per_node=args.variants, seed=args.seed)
        for position, task in enumerate(tasks):
            work.append((f"{spec.name}#{position:03d}", task))
    if args.limit is not None:
        work = work[: args.limit]

    def run_item(entry: tuple[str, GenerationTask]) -> dict[str, Any]:
        item_id, task = entry
        if args.backend == "mock":
            backend: LMBackend = MockBackend(seed=_derive_seed(args.seed, item_id))
        else:
            backend = HTTPBackend.from_env()
        prompt, candidates = generate_candidates(task, config, args.k, backend, index, pool)
        chosen = candidates[0]
        return {
            "id": item_id,
            "dialogue": task.spec.name,
            "target": task.gold_target.id,
            "gold_text": task.gold_target.text,
            "prompt_tokens": prompt.token_count,
            "candidate": {
                "speaker": chosen.speaker,
                "text": chosen.text,
                "facts": [
                    {"source": f.source, "i": f.index} if isinstance(f, FactRef) else {"raw": f}
                    for f in chosen.selected_facts
                ],
            },
        }

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as executor:
            items = list(executor.map(run_item, work))
    else:
        items = [run_item(entry) for entry in work]

    payload = {"mode": args.mode, "seed": args.seed, "k": args.k, "items": items}
    _emit(args, canonical_json(payload))
    return 0


def _cmd_spine(args: argparse.Namespace) -> int:
    corpus = _load(args.corpus)
    spec, tree = _find_dialogue(corpus, args.dialogue)
    start = tree.nodes[tree.start_id]
    index, pool = _exemplar_context(corpus, args)
    config = PromptConfig(
        mode=args.mode, token_budget=args.budget, allow_few_shot=args.few_shot, seed=args.seed
    )
    result = generate_spine(
        spec,
        start,
        rounds=args.rounds,
        k=args.k,
        config=config,
        policy=SeededRandomPolicy(args.seed),
        backend=_make_backend(args),
        index=index,
        pool=pool,
    )
    if not result.complete:
        sys.stderr.write(f"spine stopped early after {result.rounds} rounds\n")
    export = Corpus(
        quests=(QuestSpec(quest_name=spec.quest_name),),
        dialogues=((spec, result.tree),),
    )
    payload = corpus_to_dict(export)
    payload["spine"] = {
        "committed_path": list(result.committed_path),
        "rounds": result.rounds,
        "complete": result.complete,
    }
    _emit(args, canonical_json(payload))
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    corpus = _load(args.corpus)
    try:
        results_payload = json.loads(Path(args.results).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CliError(f"no such file: {args.results}")
    by_name = {spec.name: (spec, tree) for spec, tree in corpus.dialogues}
    pairs = []
    for item in results_payload["items"]:
        if item["dialogue"] not in by_name:
            raise CliError(f"results reference unknown dialogue {item['dialogue']!r}")
        spec, tree = by_name[item["dialogue"]]
        target = tree.nodes.get(item["target"])
        if target is None:
            raise CliError(f"results reference unknown node {item['target']!r}")
        task = GenerationTask(
            spec=spec,
            subtree=tree,
            most_recent=tree.start_id,
            history=History((tree.start_id,)),
            gold_target=target,
            gold_facts=target.support_facts,
        )
        pairs.append((task, item["candidate"]["text"]))
    report = evaluate_nup(pairs, resamples=args.resamples, seed=args.seed)
    if args.table:
        _emit(args, render_report_table(report) + "\n")
    else:
        _emit(args, report.to_json())
    return 0


def _load_annotation_map(path: str) -> dict[str, set[FactRef]]:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CliError(f"no such file: {path}")
    return {
        node_id: {FactRef(f["source"], f["i"]) for f in refs}
        for node_id, refs in payload.items()
    }


def _cmd_agree(args: argparse.Namespace) -> int:
    a = _load_annotation_map(args.a)
    b = _load_annotation_map(args.b)
    try:
        result = annotation_agreement(a, b)
    except (KeyError, ValueError) as exc:
        raise CliError(str(exc))
    _emit(args, canonical_json(result))
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(
        backend=_make_backend(args),
        snapshot_dir=args.snapshot_dir,
        cors_origins=tuple(args.cors_origin),
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser, seed: bool = True) -> None:
    parser.add_argument("--out", help="write output to a file instead of stdout")
    parser.add_argument("--json-errors", action="store_true", help="machine-readable errors on stderr")
    if seed:
        parser.add_argument("--seed", type=int, default=0)


def _add_prompting(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--mode", default="full",
                        choices=["vanilla", "quest_only", "full", "ks", "ks_one_fact", "ks_oracle"])
    parser.add_argument("--budget", type=int, default=4000, help="prompt token budget")
    few = parser.add_mutually_exclusive_group()
    few.add_argument("--few-shot", dest="few_shot", action="store_true", default=True)
    few.add_argument("--no-few-shot", dest="few_shot", action="store_false")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="questwriter",
                                     description="Knowledge-constrained NPC dialogue authoring")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a corpus file against all invariants")
    p.add_argument("corpus")
    _add_common(p, seed=False)
    p.set_defaults(fn=_cmd_validate)

    p = sub.add_parser("stats", help="dataset summary counts")
    p.add_argument("corpus")
    _add_common(p, seed=False)
    p.set_defaults(fn=_cmd_stats)

    p = sub.add_parser("split", help="assign quests to train/dev/test")
    p.add_argument("corpus")
    p.add_argument("--train", type=int, required=True)
    p.add_argument("--dev", type=int, required=True)
    p.add_argument("--test", type=int, required=True)
    _add_common(p)
    p.set_defaults(fn=_cmd_split)

    p = sub.add_parser("linearize", help="longest edge-simple history to a node")
    p.add_argument("corpus")
    p.add_argument("--dialogue", required=True)
    p.add_argument("--node", required=True)
    p.add_argument("--budget", type=int, default=100_000, help="search expansion budget")
    _add_common(p, seed=False)
    p.set_defaults(fn=_cmd_linearize)

    p = sub.add_parser("prompt", help="render a budgeted prompt for a generation point")
    p.add_argument("corpus")
    p.add_argument("--dialogue", required=True)
    p.add_argument("--node", required=True, help="most-recent node id")
    _add_prompting(p)
    _add_common(p)
    p.set_defaults(fn=_cmd_prompt)

    p = sub.add_parser("nup", help="generate candidates for next-utterance tasks")
    p.add_argument("corpus")
    p.add_argument("--split", default="test", help="train/dev/test/all")
    p.add_argument("--variants", type=int, default=1)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--limit", type=int, default=None, help="cap the number of items")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--backend", default="mock", choices=["mock", "http"])
    _add_prompting(p)
    _add_common(p)
    p.set_defaults(fn=_cmd_nup)

    p = sub.add_parser("spine", help="grow a multi-candidate spine tree")
    p.add_argument("corpus")
    p.add_argument("--dialogue", required=True)
    p.add_argument("--rounds", type=int, default=10)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--backend", default="mock", choices=["mock", "http"])
    _add_prompting(p)
    _add_common(p)
    p.set_defaults(fn=_cmd_spine)

    p = sub.add_parser("eval", help="score NUP results against reference sets")
    p.add_argument("--results", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--resamples", type=int, default=1000)
    p.add_argument("--table", action="store_true", help="plain-text table instead of JSON")
    _add_common(p)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("agree", help="annotation agreement between two fact maps")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    _add_common(p, seed=False)
    p.set_defaults(fn=_cmd_agree)

    p = sub.add_parser("serve", help="run the authoring HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8470)
    p.add_argument("--backend", default="mock", choices=["mock", "http"])
    p.add_argument("--snapshot-dir", default=None)
    p.add_argument("--cors-origin", action="append", default=["*"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json-errors", action="store_true")
    p.set_defaults(fn=_cmd_serve)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        if args.json_errors:
            sys.stderr.write(json.dumps({"error": {"code": "usage", "message": str(exc)}}) + "\n")
        else:
            sys.stderr.write(f"error: {exc}\n")
        return 2
    except Exception as exc:  # noqa: BLE001 - surface anything else uniformly
        if getattr(args, "json_errors", False):
            sys.stderr.write(
                json.dumps({"error": {"code": type(exc).__name__, "message": str(exc)}}) + "\n"
            )
        else:
            sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
