"""Tree linearization: maximal-coverage utterance histories and NUP tasks.

A history is the longest path from the start node to a target that follows
each directed edge at most once (cycles allowed, so it can revisit nodes).
Longest path is NP-hard in general; dialogue graphs are small enough for an
exact depth-first search with a remaining-edges bound. A search budget caps
pathological inputs, falling back to the best path found so far.
"""

from __future__ import annotations

import random
import zlib
from collections import deque
from dataclasses import dataclass

from .model import DialogueSpec, DialogueTree, FactRef, UtteranceNode

__all__ = [
    "History",
    "PathEnumeration",
    "GenerationTask",
    "UnreachableTargetError",
    "DEFAULT_SEARCH_BUDGET",
    "linearize",
    "longest_history",
    "all_edge_simple_paths",
    "sample_path",
    "check_history",
    "canonical_node_order",
    "prefix_subtree",
    "build_nup_items",
]

DEFAULT_SEARCH_BUDGET = 100_000

# exact uniform sampling is used while the path count stays at or below this
EXACT_SAMPLE_CAP = 10_000


class UnreachableTargetError(ValueError):
    """Raised when the requested node cannot be reached from the start."""


@dataclass(frozen=True)
class History:
    """An edge-simple start-to-target node sequence."""

    node_ids: tuple[str, ...]
    budget_truncated: bool = False

    def __len__(self) -> int:
        return len(self.node_ids)


@dataclass(frozen=True)
class PathEnumeration:
    """All edge-simple start-to-target paths, flagged if the cap was hit."""

    paths: tuple[tuple[str, ...], ...]
    truncated: bool = False


@dataclass(frozen=True)
class GenerationTask:
    """One next-utterance generation instance over a partial tree."""

    spec: DialogueSpec
    subtree: DialogueTree
    most_recent: str
    history: History
    gold_target: UtteranceNode | None = None
    gold_facts: tuple[FactRef, ...] | None = None

    @property
    def history_nodes(self) -> tuple[UtteranceNode, ...]:
        return tuple(self.subtree.nodes[i] for i in self.history.node_ids)


def _adjacency(tree: DialogueTree) -> dict[str, tuple[str, ...]]:
    out: dict[str, list[str]] = {n: [] for n in tree.nodes}
    for key in sorted(set(tree.edge_keys())):
        from_id, to_id = key
        if from_id in out and to_id in tree.nodes:
            out[from_id].append(to_id)
    return {n: tuple(sorted(set(vs))) for n, vs in out.items()}


def _require_reachable(tree: DialogueTree, target: str) -> None:
    if target not in tree.nodes:
        raise UnreachableTargetError(f"target {target!r} not in tree")
    seen = {tree.start_id}
    queue = deque([tree.start_id])
    while queue:
        current = queue.popleft()
        if current == target:
            return
        for edge in tree.edges:
            if edge.from_id == current and edge.to_id in tree.nodes and edge.to_id not in seen:
                seen.add(edge.to_id)
                queue.append(edge.to_id)
    raise UnreachableTargetError(f"target {target!r} unreachable from start {tree.start_id!r}")


def _shortest_path(tree: DialogueTree, target: str) -> tuple[str, ...]:
    parents: dict[str, str] = {}
    adjacency = _adjacency(tree)
    queue = deque([tree.start_id])
    seen = {tree.start_id}
    while queue:
        current = queue.popleft()
        if current == target:
            break
        for nxt in adjacency[current]:
            if nxt not in seen:
                seen.add(nxt)
                parents[nxt] = current
                queue.append(nxt)
    path = [target]
    while path[-1] != tree.start_id:
        path.append(parents[path[-1]])
    return tuple(reversed(path))


def linearize(tree: DialogueTree, target: str, search_budget: int = DEFAULT_SEARCH_BUDGET) -> History:
    """Longest edge-simple path from start to ``target``.

    Among equal-length maxima the lexicographically smallest id sequence is
    returned. Successors are explored in ascending id order, so complete
    paths are enumerated in lexicographic order and the first maximum found
    is the tie-break winner; the bound (current length plus unused edges)
    therefore prunes only strictly worse or lexicographically later paths.

    If the expansion budget runs out, the best path found so far is
    returned with ``budget_truncated=True`` (falling back to a shortest
    path when the search never completed one).
    """
    _require_reachable(tree, target)
    adjacency = _adjacency(tree)
    total_edges = sum(len(v) for v in adjacency.values())

    best: list[tuple[str, ...]] = []
    expansions = 0
    exhausted = False

    path = [tree.start_id]
    used: set[tuple[str, str]] = set()

    def dfs(current: str) -> bool:
        nonlocal expansions, exhausted
        expansions += 1
        if expansions > search_budget:
            exhausted = True
            return False
        if current == target:
            if not best or len(path) > len(best[0]):
                best[:] = [tuple(path)]
        if best and len(path) + (total_edges - len(used)) <= len(best[0]):
            return True
        for nxt in adjacency[current]:
            edge = (current, nxt)
            if edge in used:
                continue
            used.add(edge)
            path.append(nxt)
            alive = dfs(nxt)
            path.pop()
            used.remove(edge)
            if not alive:
                return False
        return True

    dfs(tree.start_id)

    if best:
        return History(best[0], budget_truncated=exhausted)
    return History(_shortest_path(tree, target), budget_truncated=True)


def longest_history(tree: DialogueTree, search_budget: int = DEFAULT_SEARCH_BUDGET) -> History:
    """Longest edge-simple path from start to any node (ties: length, then lex)."""
    best: History | None = None
    for node_id in sorted(tree.nodes):
        try:
            history = linearize(tree, node_id, search_budget)
        except UnreachableTargetError:
            continue
        if best is None or len(history) > len(best) or (
            len(history) == len(best) and history.node_ids < best.node_ids
        ):
            best = history
    if best is None:
        raise UnreachableTargetError(f"start {tree.start_id!r} not in tree")
    return best


def all_edge_simple_paths(tree: DialogueTree, target: str, cap: int = EXACT_SAMPLE_CAP) -> PathEnumeration:
    """Enumerate every edge-simple start-to-target path, in lexicographic order.

    Serves as the independent oracle for ``linearize``. Stops after ``cap``
    paths and flags the result as truncated.
    """
    if cap <= 0:
        raise ValueError("cap must be positive")
    _require_reachable(tree, target)
    adjacency = _adjacency(tree)

    found: list[tuple[str, ...]] = []
    truncated = False

    path = [tree.start_id]
    used: set[tuple[str, str]] = set()

    def dfs(current: str) -> bool:
        nonlocal truncated
        if current == target:
            if len(found) >= cap:
                truncated = True
                return False
            found.append(tuple(path))
        for nxt in adjacency[current]:
            edge = (current, nxt)
            if edge in used:
                continue
            used.add(edge)
            path.append(nxt)
            alive = dfs(nxt)
            path.pop()
            used.remove(edge)
            if not alive:
                return False
        return True

    dfs(tree.start_id)
    return PathEnumeration(tuple(found), truncated)


def sample_path(tree: DialogueTree, target: str, seed: int) -> History:
    """Uniformly sample one edge-simple start-to-target path.

    Exact uniform choice over the enumeration when it fits under the cap;
    otherwise a seeded random walk with restarts over unused edges.
    """
    rng = random.Random(seed)
    enumeration = all_edge_simple_paths(tree, target, EXACT_SAMPLE_CAP)
    if not enumeration.truncated:
        return History(enumeration.paths[rng.randrange(len(enumeration.paths))])

    adjacency = _adjacency(tree)
    for _ in range(10_000):
        path = [tree.start_id]
        used: set[tuple[str, str]] = set()
        while True:
            current = path[-1]
            options = [n for n in adjacency[current] if (current, n) not in used]
            if current == target and (not options or rng.random() < 0.5):
                return History(tuple(path))
            if not options:
                break
            nxt = options[rng.randrange(len(options))]
            used.add((current, nxt))
            path.append(nxt)
    # the walk keeps failing only on adversarial graphs; fall back to the best known path
    return linearize(tree, target)


def check_history(tree: DialogueTree, history: History, target: str | None = None) -> list[str]:
    """Return violations of the History invariants (empty list = valid)."""
    problems: list[str] = []
    ids = history.node_ids
    if not ids:
        return ["history is empty"]
    if ids[0] != tree.start_id:
        problems.append(f"history starts at {ids[0]!r}, not start {tree.start_id!r}")
    if target is not None and ids[-1] != target:
        problems.append(f"history ends at {ids[-1]!r}, not target {target!r}")
    edge_keys = set(tree.edge_keys())
    used: set[tuple[str, str]] = set()
    for a, b in zip(ids, ids[1:]):
        if (a, b) not in edge_keys:
            problems.append(f"no edge {a!r}->{b!r}")
        if (a, b) in used:
            problems.append(f"edge {a!r}->{b!r} repeated")
        used.add((a, b))
    for node_id in ids:
        if node_id not in tree.nodes:
            problems.append(f"unknown node {node_id!r}")
    return problems


def canonical_node_order(tree: DialogueTree) -> tuple[str, ...]:
    """Breadth-first order from the start node, ties broken by node id."""
    adjacency = _adjacency(tree)
    order = [tree.start_id]
    seen = {tree.start_id}
    queue = deque([tree.start_id])
    while queue:
        current = queue.popleft()
        for nxt in adjacency[current]:
            if nxt not in seen:
                seen.add(nxt)
                order.append(nxt)
                queue.append(nxt)
    return tuple(order)


def prefix_subtree(tree: DialogueTree, node_ids: tuple[str, ...]) -> DialogueTree:
    """Induced subgraph over ``node_ids`` (which must include the start)."""
    keep = set(node_ids)
    return DialogueTree(
        nodes={i: tree.nodes[i] for i in node_ids},
        edges=tuple(e for e in tree.edges if e.from_id in keep and e.to_id in keep),
        start_id=tree.start_id,
    )


def _derive_seed(seed: int, *parts: str) -> int:
    return zlib.crc32(f"{seed}:{':'.join(parts)}".encode("utf-8"))


def build_nup_items(
    tree: DialogueTree,
    spec: DialogueSpec,
    variants_per_node: int = 1,
    seed: int = 0,
) -> list[GenerationTask]:
    """Per-node generation tasks over the gold tree.

    Nodes are visited in canonical order (breadth-first, id tie-break); each
    non-start node becomes ``variants_per_node`` tasks whose subtree is the
    canonical prefix before it and whose history is a sampled random path to
    its smallest-id parent inside that prefix. Duplicate histories are kept
    on purpose: single-path graphs simply repeat.
    """
    order = canonical_node_order(tree)
    tasks: list[GenerationTask] = []
    for position, node_id in enumerate(order):
        if position == 0:
            continue
        prefix_ids = order[:position]
        subtree = prefix_subtree(tree, prefix_ids)
        prefix_set = set(prefix_ids)
        parents = sorted(p for p in tree.predecessors(node_id) if p in prefix_set)
        if not parents:
            continue
        most_recent = parents[0]
        target_node = tree.nodes[node_id]
        for variant in range(variants_per_node):
            history = sample_path(
                subtree, most_recent, _derive_seed(seed, node_id, str(variant))
            )
            tasks.append(
                GenerationTask(
                    spec=spec,
                    subtree=subtree,
                    most_recent=most_recent,
                    history=history,
                    gold_target=target_node,
                    gold_facts=target_node.support_facts,
                )
            )
    return tasks
