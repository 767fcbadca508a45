"""Deterministic synchronous scheduler for the reconstruction protocol.

Messages emitted during delivery step ``s`` are delivered at step ``s + 1``.
Within a step, messages are processed in ``(src, dst, kind, payload)`` order,
and each subround runs until no message is in flight before the next one starts.
"""

from __future__ import annotations

import logging
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import protocol as P
from .errors import RoundDivergence, UnknownNode
from .protocol import Cluster, Kind, Message, NodeState
from .topology import CommGraph, EdgeKey, NodeId, oracle_msf, remove_nodes

log = logging.getLogger(__name__)

TRACE_LEVELS = ("off", "summary", "full")
KIND_LABELS = tuple(k.label for k in Kind)


@dataclass(frozen=True)
class Scenario:
    graph: CommGraph
    faulty: frozenset[NodeId]
    max_rounds: int | None = None
    trace_level: str = "summary"
    initial_tree: frozenset[EdgeKey] = field(init=False)

    def __post_init__(self) -> None:
        faulty = frozenset(self.faulty)
        object.__setattr__(self, "faulty", faulty)
        if not faulty:
            raise ValueError("scenario needs at least one faulty node")
        unknown = faulty - self.graph.nodes
        if unknown:
            raise UnknownNode(f"unknown faulty node ids: {sorted(unknown)}")
        if faulty == self.graph.nodes:
            raise ValueError("every node is faulty")
        if self.max_rounds is None:
            object.__setattr__(self, "max_rounds", len(self.graph.positions))
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if self.trace_level not in TRACE_LEVELS:
            raise ValueError(f"trace_level must be one of {TRACE_LEVELS}")
        # a disconnected graph starts from its spanning forest and can only end irreparable
        object.__setattr__(self, "initial_tree", oracle_msf(self.graph))

    @property
    def graph_connected(self) -> bool:
        return len(self.initial_tree) == len(self.graph.positions) - 1


@dataclass
class RoundReport:
    round: int
    clusters_before: int
    clusters_after: int = 0
    merges: list[tuple[int, int, EdgeKey]] = field(default_factory=list)
    messages_by_kind: dict[str, int] = field(default_factory=lambda: dict.fromkeys(KIND_LABELS, 0))
    cluster_sizes: dict[int, int] = field(default_factory=dict)
    ignores_by_cluster: dict[int, int] = field(default_factory=dict)
    steps: dict[str, int] = field(default_factory=dict)
    dropped_merges: int = 0
    # TESTs that found an internal edge (answered by REJECT or crossed by a TEST)
    failed_tests: int = 0
    tree_edges: frozenset[EdgeKey] = frozenset()
    # a terminal round only ran Subround I and found no outgoing edge anywhere
    terminal: bool = False

    @property
    def total_messages(self) -> int:
        return sum(self.messages_by_kind.values())

    @property
    def reject_messages(self) -> int:
        return self.failed_tests + self.messages_by_kind["reject"]


@dataclass
class SimResult:
    status: str  # reconstructed | irreparable | round_limit
    rounds_used: int
    final_tree: frozenset[EdgeKey]
    reports: list[RoundReport]
    reduced: CommGraph
    initial_clusters: list[Cluster]
    trace: list[str]
    verdicts: object = None

    @property
    def k(self) -> int:
        return len(self.initial_clusters)

    def messages_by_kind(self) -> dict[str, int]:
        totals = Counter(dict.fromkeys(KIND_LABELS, 0))
        for r in self.reports:
            totals.update(r.messages_by_kind)
        return {k: totals[k] for k in KIND_LABELS}


def inject_faults(scenario: Scenario) -> tuple[CommGraph, list[Cluster]]:
    reduced = remove_nodes(scenario.graph, scenario.faulty)
    return reduced, P.decompose(scenario.initial_tree, scenario.faulty, scenario.graph.nodes)


class Simulator:
    """Runs one scenario. ``parallel`` evaluates distinct nodes of a step on a thread pool."""

    def __init__(self, scenario: Scenario, parallel: bool = False, workers: int = 4):
        self.scenario = scenario
        self.reduced, self.clusters = inject_faults(scenario)
        self.nodes: dict[NodeId, NodeState] = P.build_states(self.reduced, self.clusters)
        self.parallel = parallel
        self.workers = workers
        self.budget = 4 * max(len(scenario.graph.positions), 1)
        self.trace: list[str] = []
        self.round = 0
        self._report: RoundReport | None = None
        self._pool: ThreadPoolExecutor | None = None

    # -- delivery ---------------------------------------------------------

    def _process(self, batch: list[Message], step: int) -> list[Message]:
        node = self.nodes[batch[0].dst]
        out: list[Message] = []
        for m in batch:
            out += P.handle(node, m, step)
        return out

    def _deliver(self, msgs: list[Message], phase: str, step: int) -> list[Message]:
        rep = self._report
        full = self.scenario.trace_level == "full"
        groups: dict[NodeId, list[Message]] = defaultdict(list)
        for m in msgs:
            rep.messages_by_kind[m.kind.label] += 1
            if m.kind is Kind.IGNORE:
                c = self.nodes[m.src].round_cluster
                rep.ignores_by_cluster[c] = rep.ignores_by_cluster.get(c, 0) + 1
            if full:
                self.trace.append(
                    f"{self.round}\t{phase}\t{m.kind.label}\t{m.src}\t{m.dst}\t{m.payload()}"
                )
            groups[m.dst].append(m)
        batches = [groups[d] for d in sorted(groups)]
        if self._pool is not None and len(batches) > 1:
            results = list(self._pool.map(lambda b: self._process(b, step), batches))
        else:
            results = [self._process(b, step) for b in batches]
        out = [m for r in results for m in r]
        out.sort(key=Message.sort_key)
        return out

    def _run_phase(
        self, phase: str, msgs: list[Message], defer: frozenset[Kind] = frozenset()
    ) -> list[Message]:
        """Deliver until quiescent; messages of a ``defer`` kind are returned undelivered."""
        held: list[Message] = []
        steps = self._report.steps
        msgs = sorted(msgs, key=Message.sort_key)
        while True:
            if defer:
                held += [m for m in msgs if m.kind in defer]
                msgs = [m for m in msgs if m.kind not in defer]
            if not msgs:
                return held
            steps[phase] = steps.get(phase, 0) + 1
            if steps[phase] > self.budget:
                raise RoundDivergence(
                    f"round {self.round} subround {phase} exceeded {self.budget} steps"
                )
            msgs = self._deliver(msgs, phase, steps[phase])

    # -- rounds -----------------------------------------------------------

    def roots(self) -> list[NodeState]:
        return [s for _, s in sorted(self.nodes.items()) if s.is_root]

    def tree_edges(self) -> frozenset[EdgeKey]:
        return frozenset(s.edge_to[s.parent] for s in self.nodes.values() if s.parent is not None)

    def run_round(self) -> RoundReport:
        self.round += 1
        roots = self.roots()
        rep = self._report = RoundReport(self.round, clusters_before=len(roots))
        for s in self.nodes.values():
            s.reset_round()
        rep.cluster_sizes = dict(sorted(Counter(s.cluster for s in self.nodes.values()).items()))

        # I: moe discovery
        active = [r for r in roots if not r.terminated]
        msgs = [m for r in active for m in P.start_round(r)]
        self._run_phase("I", msgs)
        active = [r for r in active if not r.terminated]
        rep.failed_tests = sum(s.failed_tests for s in self.nodes.values())
        if not active:
            rep.terminal = True
            rep.clusters_after = rep.clusters_before
            rep.tree_edges = self.tree_edges()
            return rep

        # II: merge requests, then convergecast of accepted requests by depth
        msgs = [m for s in self._ordered() for m in P.send_merge_req(s)]
        self._run_phase("II", msgs)
        for d in sorted({s.depth for s in self.nodes.values() if s.depth > 0}, reverse=True):
            wave = [m for s in self._ordered() if s.depth == d for m in P.flush_internal(s)]
            self._run_phase("II", wave)

        # III: root decisions routed to the boundary nodes
        msgs = [m for r in active for m in P.decide_merge(r)]
        crossing = self._run_phase("III", msgs, defer=frozenset({Kind.MERGE, Kind.IGNORE}))

        # IV: merges land, then commits in ascending winner id so each commit
        # carries its cluster's final id for this round
        self._run_phase("IV", crossing)
        commits = sorted(
            (s.round_cluster, e, s.me) for s in self.nodes.values() for e in s.pending_commits
        )
        for winner, e, me in commits:
            absorbed = self.nodes[e.other(me)].round_cluster
            rep.merges.append((winner, absorbed, e))
            self._run_phase("IV", P.release_commit(self.nodes[me], e))
        rep.dropped_merges = sum(s.dropped for s in self.nodes.values())
        rep.clusters_after = len(self.roots())
        rep.tree_edges = self.tree_edges()
        return rep

    def _ordered(self) -> list[NodeState]:
        return [s for _, s in sorted(self.nodes.items())]

    def run(self) -> SimResult:
        reports: list[RoundReport] = []
        rounds_used = 0
        status = "round_limit"
        if self.parallel:
            self._pool = ThreadPoolExecutor(max_workers=self.workers)
        try:
            while True:
                roots = self.roots()
                if len(roots) <= 1:
                    status = "reconstructed"
                    break
                if all(r.terminated for r in roots):
                    status = "irreparable"
                    break
                if rounds_used >= self.scenario.max_rounds:
                    break
                rep = self.run_round()
                reports.append(rep)
                if rep.terminal:
                    status = "irreparable"
                    break
                rounds_used += 1
                if self.scenario.trace_level != "off":
                    self.trace.append(
                        f"# round {rep.round} clusters {rep.clusters_before}->{rep.clusters_after}"
                        f" merges {len(rep.merges)} messages {rep.total_messages}"
                    )
        finally:
            if self._pool is not None:
                self._pool.shutdown()
                self._pool = None
        log.debug("run finished: %s after %d rounds", status, rounds_used)
        return SimResult(
            status=status,
            rounds_used=rounds_used,
            final_tree=self.tree_edges(),
            reports=reports,
            reduced=self.reduced,
            initial_clusters=self.clusters,
            trace=self.trace,
        )


def run(scenario: Scenario, parallel: bool = False, verify: bool = True) -> SimResult:
    """Run a scenario to termination and attach verification verdicts."""
    result = Simulator(scenario, parallel=parallel).run()
    if verify:
        from .verification import verify_result

        result.verdicts = verify_result(result)
    return result
