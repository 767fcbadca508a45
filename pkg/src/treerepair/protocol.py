"""Per-node state machine for aggregation-tree reconstruction.

A round has four subrounds, driven by :mod:`treerepair.engine`:

I.   The cluster root floods ``FIND``; every node searches its cheapest
     non-tree edge with ``TEST``/``ACCEPT``/``REJECT``; ``REPORT`` convergecasts
     the minimum to the root, which sends ``INFORM`` down to the owner of the
     cluster's minimum outgoing edge (moe).
II.  The moe owner sends ``MERGE_REQ`` across the moe. A receiver whose cluster
     id is smaller answers ``IGNORE``; otherwise the request reaches its root
     (``INTERNAL`` hops, one per tree edge at most).
III. Each root sends ``MERGE`` to the smallest requesting cluster and
     ``IGNORE`` to the rest, or ``MERGE`` across its own moe if it stored no
     request.
IV.  ``MERGE`` over an edge the receiver also merged on: the lower id commits.
     ``MERGE`` from a larger id over another edge: the receiver commits.
     ``MERGE`` from a smaller id over another edge: dropped. ``COMMIT`` attaches
     the absorbed cluster under the committer and ``MODIFY`` re-roots it and
     rewrites its cluster id.

Handlers only read and mutate the state of the node they are called on, so the
scheduler may evaluate different nodes in parallel.
"""

from __future__ import annotations

from collections import defaultdict
from collections.abc import Iterable
from dataclasses import dataclass, field
from enum import IntEnum
from typing import NamedTuple

from .dsu import DisjointSet
from .errors import ProtocolViolation
from .topology import CommGraph, EdgeKey, NodeId


class Kind(IntEnum):
    FIND = 0
    TEST = 1
    ACCEPT = 2
    REJECT = 3
    REPORT = 4
    INFORM = 5
    MERGE_REQ = 6
    INTERNAL = 7
    MERGE = 8
    COMMIT = 9
    IGNORE = 10
    MODIFY = 11

    @property
    def label(self) -> str:
        return self.name.lower()


class Item(NamedTuple):
    """One entry of an INTERNAL message.

    ``action`` is ``req`` for a merge request travelling up to the root, or
    ``merge``/``ignore`` for a root decision travelling down to ``target``,
    the boundary node that must send it across ``edge``.
    """

    action: str
    cluster: int
    edge: EdgeKey
    target: NodeId

    def render(self) -> str:
        return f"{self.action}:{self.cluster}:{self.edge.render()}@{self.target}"


@dataclass(frozen=True, slots=True)
class Message:
    kind: Kind
    src: NodeId
    dst: NodeId
    cluster: int | None = None
    edge: EdgeKey | None = None
    owner: NodeId | None = None
    items: tuple[Item, ...] = ()

    def payload(self) -> str:
        if self.kind is Kind.REPORT:
            return "none" if self.edge is None else f"{self.edge.render()}@{self.owner}"
        if self.kind is Kind.ACCEPT:
            return str(self.owner)
        if self.kind is Kind.INTERNAL:
            return ",".join(it.render() for it in self.items)
        parts = []
        if self.cluster is not None:
            parts.append(str(self.cluster))
        if self.edge is not None:
            parts.append(self.edge.render())
        return " ".join(parts) or "-"

    def sort_key(self) -> tuple:
        return (self.src, self.dst, int(self.kind), self.payload())


@dataclass(frozen=True)
class Cluster:
    id: int
    members: frozenset[NodeId]
    tree_edges: frozenset[EdgeKey]

    @property
    def root(self) -> NodeId:
        return self.id


def decompose(
    tree: frozenset[EdgeKey], faulty: frozenset[NodeId], extra_nodes: Iterable[NodeId] = ()
) -> list[Cluster]:
    """Split the aggregation tree into the clusters left after removing ``faulty``.

    Each cluster is rooted at its smallest member that was tree-adjacent to a
    faulty node. ``tree`` may also be a spanning forest of a disconnected
    graph; a component no fault touched is then rooted at its smallest member.
    Clusters are returned in ascending id order.
    """
    faulty = frozenset(faulty)
    live_edges = [e for e in tree if e.lo not in faulty and e.hi not in faulty]
    nodes = ({v for e in tree for v in (e.lo, e.hi)} | set(extra_nodes)) - faulty
    detectors = {e.other(f) for f in faulty for e in tree if f in (e.lo, e.hi)} - faulty
    dsu = DisjointSet(nodes)
    for e in live_edges:
        dsu.union(e.lo, e.hi)
    members: dict[NodeId, set[NodeId]] = defaultdict(set)
    for v in nodes:
        members[dsu.find(v)].add(v)
    edges_of: dict[NodeId, set[EdgeKey]] = defaultdict(set)
    for e in live_edges:
        edges_of[dsu.find(e.lo)].add(e)
    clusters = []
    for rep, mem in members.items():
        roots = (mem & detectors) or mem
        clusters.append(Cluster(min(roots), frozenset(mem), frozenset(edges_of[rep])))
    return sorted(clusters, key=lambda c: c.id)


@dataclass(slots=True, eq=False)
class NodeState:
    me: NodeId
    incident: tuple[EdgeKey, ...]
    edge_to: dict[NodeId, EdgeKey]
    cluster: int
    parent: NodeId | None = None
    children: set[NodeId] = field(default_factory=set)
    rejected: set[EdgeKey] = field(default_factory=set)
    terminated: bool = False
    # per-round scratch, cleared by reset_round
    round_cluster: int = -1
    depth: int = 0
    cursor: int = 0
    testing: EdgeKey | None = None
    search_done: bool = False
    local_moe: EdgeKey | None = None
    best: EdgeKey | None = None
    best_owner: NodeId | None = None
    best_child: NodeId | None = None
    pending_reports: set[NodeId] = field(default_factory=set)
    reported: bool = False
    moe_owner: bool = False
    stored: list[Item] = field(default_factory=list)
    buffered: list[Item] = field(default_factory=list)
    routes: dict[NodeId, NodeId] = field(default_factory=dict)
    merge_edge: EdgeKey | None = None
    pending_commits: list[EdgeKey] = field(default_factory=list)
    awaiting_commit: bool = False
    dropped: int = 0
    failed_tests: int = 0

    @property
    def is_root(self) -> bool:
        return self.parent is None

    def tree_neighbors(self) -> set[NodeId]:
        nbrs = set(self.children)
        if self.parent is not None:
            nbrs.add(self.parent)
        return nbrs

    def reset_round(self) -> None:
        self.round_cluster = self.cluster
        self.depth = 0
        self.cursor = 0
        self.testing = None
        self.search_done = False
        self.local_moe = None
        self.best = self.best_owner = self.best_child = None
        self.pending_reports = set()
        self.reported = False
        self.moe_owner = False
        self.stored = []
        self.buffered = []
        self.routes = {}
        self.merge_edge = None
        self.pending_commits = []
        self.awaiting_commit = False
        self.dropped = 0
        self.failed_tests = 0

    def _send(self, kind: Kind, dst: NodeId, **payload) -> Message:
        return Message(kind, self.me, dst, **payload)


def build_states(reduced: CommGraph, clusters: list[Cluster]) -> dict[NodeId, NodeState]:
    """Initial node states: each cluster tree oriented toward its root."""
    states: dict[NodeId, NodeState] = {}
    for c in clusters:
        adj: dict[NodeId, list[NodeId]] = defaultdict(list)
        for e in c.tree_edges:
            adj[e.lo].append(e.hi)
            adj[e.hi].append(e.lo)
        parent: dict[NodeId, NodeId | None] = {c.root: None}
        order = [c.root]
        for u in order:
            for w in sorted(adj[u]):
                if w not in parent:
                    parent[w] = u
                    order.append(w)
        for v in sorted(c.members):
            inc = reduced.incident[v]
            states[v] = NodeState(
                me=v,
                incident=inc,
                edge_to={e.other(v): e for e in inc},
                cluster=c.id,
                parent=parent[v],
                children={w for w in adj[v] if parent.get(w) == v},
            )
    return states


# Subround I -----------------------------------------------------------------

def start_round(root: NodeState) -> list[Message]:
    """Root kicks off a round: FIND to its children and its own moe search."""
    out = [root._send(Kind.FIND, c, cluster=root.cluster) for c in sorted(root.children)]
    root.pending_reports = set(root.children)
    out += _next_test(root)
    out += _maybe_report(root)
    return out


def _next_test(node: NodeState) -> list[Message]:
    tree = node.tree_neighbors()
    inc = node.incident
    while node.cursor < len(inc):
        e = inc[node.cursor]
        node.cursor += 1
        if e in node.rejected or e.other(node.me) in tree:
            continue
        node.testing = e
        return [node._send(Kind.TEST, e.other(node.me), cluster=node.cluster)]
    node.testing = None
    node.search_done = True
    return []


def _maybe_report(node: NodeState) -> list[Message]:
    if node.reported or not node.search_done or node.pending_reports:
        return []
    node.reported = True
    if node.local_moe is not None and (node.best is None or node.local_moe < node.best):
        node.best, node.best_owner, node.best_child = node.local_moe, node.me, None
    if node.best_child is not None:
        node.routes[node.best_owner] = node.best_child
    if not node.is_root:
        return [node._send(Kind.REPORT, node.parent, edge=node.best, owner=node.best_owner)]
    return select_cluster_moe(node)


def select_cluster_moe(root: NodeState) -> list[Message]:
    if root.best is None:
        root.terminated = True
        return []
    if root.best_owner == root.me:
        root.moe_owner = True
        return []
    return [root._send(Kind.INFORM, root.best_child, edge=root.best)]


def _on_find(node: NodeState, msg: Message, step: int) -> list[Message]:
    if msg.src != node.parent:
        raise ProtocolViolation(f"node {node.me}: FIND from non-parent {msg.src}")
    node.cluster = msg.cluster
    node.depth = step
    node.pending_reports = set(node.children)
    out = [node._send(Kind.FIND, c, cluster=node.cluster) for c in sorted(node.children)]
    out += _next_test(node)
    out += _maybe_report(node)
    return out


def _on_test(node: NodeState, msg: Message, step: int) -> list[Message]:
    e = node.edge_to[msg.src]
    if msg.cluster != node.cluster:
        return [node._send(Kind.ACCEPT, msg.src, owner=node.me)]
    node.rejected.add(e)
    node.failed_tests += 1
    if node.testing == e:
        # both ends are testing this edge: the two TESTs already prove it
        # internal, so neither side answers and each moves on
        node.testing = None
        return _next_test(node) + _maybe_report(node)
    return [node._send(Kind.REJECT, msg.src)]


def _on_accept(node: NodeState, msg: Message, step: int) -> list[Message]:
    e = node.edge_to[msg.src]
    if e != node.testing:
        raise ProtocolViolation(f"node {node.me}: unexpected ACCEPT over {e}")
    node.local_moe = e
    node.testing = None
    node.search_done = True
    return _maybe_report(node)


def _on_reject(node: NodeState, msg: Message, step: int) -> list[Message]:
    e = node.edge_to[msg.src]
    if e != node.testing:
        raise ProtocolViolation(f"node {node.me}: unexpected REJECT over {e}")
    node.rejected.add(e)
    return _next_test(node) + _maybe_report(node)


def _on_report(node: NodeState, msg: Message, step: int) -> list[Message]:
    if msg.src not in node.pending_reports:
        raise ProtocolViolation(f"node {node.me}: duplicate or stray REPORT from {msg.src}")
    node.pending_reports.discard(msg.src)
    if msg.edge is not None and (node.best is None or msg.edge < node.best):
        node.best, node.best_owner, node.best_child = msg.edge, msg.owner, msg.src
    return _maybe_report(node)


def _on_inform(node: NodeState, msg: Message, step: int) -> list[Message]:
    if msg.edge != node.best:
        raise ProtocolViolation(f"node {node.me}: INFORM for {msg.edge}, subtree moe is {node.best}")
    if node.best_owner == node.me:
        node.moe_owner = True
        return []
    return [node._send(Kind.INFORM, node.best_child, edge=msg.edge)]


# Subround II ----------------------------------------------------------------

def send_merge_req(node: NodeState) -> list[Message]:
    if not node.moe_owner:
        return []
    e = node.local_moe
    return [node._send(Kind.MERGE_REQ, e.other(node.me), cluster=node.cluster, edge=e)]


def _on_merge_req(node: NodeState, msg: Message, step: int) -> list[Message]:
    e = node.edge_to[msg.src]
    if msg.cluster == node.cluster:
        raise ProtocolViolation(f"node {node.me}: MERGE_REQ from own cluster {msg.cluster}")
    if node.cluster < msg.cluster:
        return [node._send(Kind.IGNORE, msg.src, cluster=node.cluster, edge=e)]
    item = Item("req", msg.cluster, e, node.me)
    (node.stored if node.is_root else node.buffered).append(item)
    return []


def flush_internal(node: NodeState) -> list[Message]:
    """Forward every buffered request to the parent in one INTERNAL message.

    The scheduler calls this deepest level first, so a node has heard from
    its whole subtree before it flushes.
    """
    if node.is_root or not node.buffered:
        return []
    items = tuple(sorted(node.buffered))
    node.buffered = []
    return [node._send(Kind.INTERNAL, node.parent, items=items)]


# Subround III ---------------------------------------------------------------

def decide_merge(root: NodeState) -> list[Message]:
    if root.terminated or root.best is None:
        return []
    if root.stored:
        chosen = min(root.stored, key=lambda it: (it.cluster, it.edge))
        decisions = [
            Item("merge" if it == chosen else "ignore", it.cluster, it.edge, it.target)
            for it in sorted(root.stored)
        ]
    else:
        decisions = [Item("merge", root.cluster, root.best, root.best_owner)]
    return _dispatch_down(root, decisions)


def _dispatch_down(node: NodeState, decisions: list[Item]) -> list[Message]:
    out: list[Message] = []
    by_child: dict[NodeId, list[Item]] = defaultdict(list)
    for it in decisions:
        if it.target == node.me:
            other = it.edge.other(node.me)
            if it.action == "merge":
                node.merge_edge = it.edge
                out.append(node._send(Kind.MERGE, other, cluster=node.cluster, edge=it.edge))
            else:
                out.append(node._send(Kind.IGNORE, other, cluster=node.cluster, edge=it.edge))
        else:
            by_child[node.routes[it.target]].append(it)
    for child in sorted(by_child):
        out.append(node._send(Kind.INTERNAL, child, items=tuple(sorted(by_child[child]))))
    return out


def _on_internal(node: NodeState, msg: Message, step: int) -> list[Message]:
    if msg.src == node.parent:
        return _dispatch_down(node, list(msg.items))
    if msg.src not in node.children:
        raise ProtocolViolation(f"node {node.me}: INTERNAL from non-tree neighbor {msg.src}")
    for it in msg.items:
        node.routes[it.target] = msg.src
    (node.stored if node.is_root else node.buffered).extend(msg.items)
    return []


# Subround IV ----------------------------------------------------------------

def _on_merge(node: NodeState, msg: Message, step: int) -> list[Message]:
    e = node.edge_to[msg.src]
    if node.merge_edge == e:
        if node.cluster < msg.cluster:
            node.pending_commits.append(e)
        else:
            node.awaiting_commit = True
    elif msg.cluster > node.cluster:
        node.pending_commits.append(e)
    else:
        node.dropped += 1
    return []


def _on_ignore(node: NodeState, msg: Message, step: int) -> list[Message]:
    return []


def release_commit(node: NodeState, e: EdgeKey) -> list[Message]:
    """Commit an accepted merge: the cluster across ``e`` becomes a subtree of ``node``.

    Called once the committer's own cluster id is final for this round.
    """
    other = e.other(node.me)
    node.children.add(other)
    return [node._send(Kind.COMMIT, other, cluster=node.cluster, edge=e)]


def _reroot(node: NodeState, new_parent: NodeId, cluster: int) -> list[Message]:
    old = node.tree_neighbors()
    old.discard(new_parent)
    node.parent = new_parent
    node.children = old
    node.cluster = cluster
    return [node._send(Kind.MODIFY, c, cluster=cluster) for c in sorted(old)]


def _on_commit(node: NodeState, msg: Message, step: int) -> list[Message]:
    e = node.edge_to[msg.src]
    if node.merge_edge != e:
        raise ProtocolViolation(f"node {node.me}: COMMIT over {e} without a preceding MERGE")
    node.awaiting_commit = False
    return _reroot(node, msg.src, msg.cluster)


def _on_modify(node: NodeState, msg: Message, step: int) -> list[Message]:
    if msg.src not in node.tree_neighbors():
        raise ProtocolViolation(f"node {node.me}: MODIFY from non-tree neighbor {msg.src}")
    return _reroot(node, msg.src, msg.cluster)


_HANDLERS = {
    Kind.FIND: _on_find,
    Kind.TEST: _on_test,
    Kind.ACCEPT: _on_accept,
    Kind.REJECT: _on_reject,
    Kind.REPORT: _on_report,
    Kind.INFORM: _on_inform,
    Kind.MERGE_REQ: _on_merge_req,
    Kind.INTERNAL: _on_internal,
    Kind.MERGE: _on_merge,
    Kind.IGNORE: _on_ignore,
    Kind.COMMIT: _on_commit,
    Kind.MODIFY: _on_modify,
}


def handle(node: NodeState, msg: Message, step: int) -> list[Message]:
    """Apply one delivered message to ``node``; return the messages it emits.

    ``step`` is the delivery step within the current subround, which the
    synchronous model makes known to every node.
    """
    if msg.dst != node.me:
        raise ProtocolViolation(f"message for {msg.dst} delivered to {node.me}")
    return _HANDLERS[msg.kind](node, msg, step)
