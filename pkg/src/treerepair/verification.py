"""Independent checkers for a finished run.

These read only trees, graphs and per-round message counts. Nothing here
looks at protocol node state.
"""

from __future__ import annotations

import math
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass
from enum import Enum

from .dsu import DisjointSet
from .errors import MissingTrace
from .topology import CommGraph, EdgeKey, NodeId, oracle_msf, oracle_mst


class RoundClass(str, Enum):
    BEST_CASE = "best_case"
    LOG_BOUNDED = "log_bounded"
    LINEAR_BOUNDED = "linear_bounded"
    EXCEEDED = "exceeded"


@dataclass(frozen=True)
class Verdicts:
    acyclic: bool
    spanning: bool
    mst_equivalent: bool
    weight_delta: float
    message_bound_ok: bool
    rounds_observed: int
    every_round_acyclic: bool
    round_class: str
    rounds_ok: bool
    ok: bool

    def to_dict(self) -> dict:
        return asdict(self)


def check_acyclic_spanning(tree: Iterable[EdgeKey], live: Iterable[NodeId]) -> tuple[bool, bool]:
    live = set(live)
    tree = list(tree)
    dsu = DisjointSet(live)
    acyclic = True
    endpoints_live = True
    for e in tree:
        for v in (e.lo, e.hi):
            if v not in live:
                endpoints_live = False
                dsu.add(v)
        if not dsu.union(e.lo, e.hi):
            acyclic = False
    spanning = (
        endpoints_live
        and len(tree) == max(len(live) - 1, 0)
        and dsu.components() <= 1
    )
    return acyclic, spanning


def check_mst(tree: Iterable[EdgeKey], reduced: CommGraph) -> tuple[bool, float]:
    """Compare against the oracle MST of the reduced graph.

    Raises DisconnectedGraph when the reduced graph has no spanning tree.
    """
    tree = frozenset(tree)
    best = oracle_mst(reduced)
    return tree == best, math.fsum(e.weight for e in tree) - math.fsum(e.weight for e in best)


def check_forest(tree: Iterable[EdgeKey], reduced: CommGraph) -> tuple[bool, float]:
    """Like check_mst, against the minimum spanning forest of a disconnected graph."""
    tree = frozenset(tree)
    best = oracle_msf(reduced)
    return tree == best, math.fsum(e.weight for e in tree) - math.fsum(e.weight for e in best)


@dataclass(frozen=True)
class BoundCheck:
    ok: bool
    worst_round_ratio: float  # max over rounds of non-reject messages / (6 * sum n_i)
    reject_messages: int
    reject_budget: int
    max_ignores_per_cluster: int
    ignore_budget: int


def message_bounds(reports: Sequence | None, edge_count: int, k: int) -> BoundCheck:
    """Evaluate the per-round and per-run message budgets."""
    if reports is None:
        raise MissingTrace("no round reports recorded")
    worst = 0.0
    per_round_ok = True
    rejects = 0
    ignores: Counter[int] = Counter()
    for r in reports:
        counts = r.messages_by_kind
        if counts is None:
            raise MissingTrace(f"round {r.round} carries no message counts")
        rej = r.reject_messages
        non_reject = sum(counts.values()) - rej
        budget = 6 * sum(r.cluster_sizes.values())
        if budget:
            worst = max(worst, non_reject / budget)
        per_round_ok &= non_reject <= budget
        rejects += rej
        ignores.update(r.ignores_by_cluster)
    max_ign = max(ignores.values(), default=0)
    ok = per_round_ok and rejects <= 2 * edge_count and max_ign <= max(k - 1, 0)
    return BoundCheck(ok, worst, rejects, 2 * edge_count, max_ign, max(k - 1, 0))


def check_message_bounds(reports: Sequence | None, edge_count: int, k: int) -> bool:
    return message_bounds(reports, edge_count, k).ok


def check_round_bounds(rounds: int, k: int) -> RoundClass:
    if rounds > max(k - 1, 0):
        return RoundClass.EXCEEDED
    if rounds <= 1:
        return RoundClass.BEST_CASE
    if rounds <= math.ceil(math.log2(k)) + 1:
        return RoundClass.LOG_BOUNDED
    return RoundClass.LINEAR_BOUNDED


def verify_result(result) -> Verdicts:
    reduced = result.reduced
    live = reduced.nodes
    acyclic, spanning = check_acyclic_spanning(result.final_tree, live)
    every_round = all(check_acyclic_spanning(r.tree_edges, live)[0] for r in result.reports)
    if result.status == "reconstructed":
        mst_ok, delta = check_mst(result.final_tree, reduced)
    else:
        mst_ok, delta = check_forest(result.final_tree, reduced)
    bounds_ok = check_message_bounds(result.reports, len(reduced.edges), result.k)
    rclass = check_round_bounds(result.rounds_used, result.k)
    rounds_ok = rclass is not RoundClass.EXCEEDED
    ok = acyclic and every_round and mst_ok and bounds_ok and rounds_ok
    if result.status == "reconstructed":
        ok = ok and spanning
    elif result.status == "round_limit":
        ok = False
    return Verdicts(
        acyclic=acyclic,
        spanning=spanning,
        mst_equivalent=mst_ok,
        weight_delta=delta,
        message_bound_ok=bounds_ok,
        rounds_observed=result.rounds_used,
        every_round_acyclic=every_round,
        round_class=rclass.value,
        rounds_ok=rounds_ok,
        ok=ok,
    )
