"""Communication graph model, random geometric graphs and the centralized MST oracle.

Every edge is identified by an :class:`EdgeKey` ``(weight, lo, hi)``. Comparing
keys as tuples gives a strict total order over the edges of a graph, so the
minimum spanning tree is unique even when distances repeat.
"""

from __future__ import annotations

import math
import random
from collections import deque
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

from .dsu import DisjointSet
from .errors import ConfigError, DisconnectedGraph, UnknownNode

NodeId = int
Position = tuple[float, float]


class EdgeKey(NamedTuple):
    weight: float
    lo: NodeId
    hi: NodeId

    @classmethod
    def of(cls, weight: float, u: NodeId, v: NodeId) -> EdgeKey:
        if u == v:
            raise ValueError(f"self-loop on node {u}")
        return cls(weight, u, v) if u < v else cls(weight, v, u)

    def other(self, me: NodeId) -> NodeId:
        if me == self.lo:
            return self.hi
        if me == self.hi:
            return self.lo
        raise ValueError(f"node {me} is not an endpoint of {self}")

    def render(self) -> str:
        return f"{self.lo}-{self.hi}:{self.weight!r}"


def edge_order(a: EdgeKey, b: EdgeKey) -> int:
    """Three-way comparison on (weight, lo, hi): -1, 0 or 1."""
    ta, tb = tuple(a), tuple(b)
    return (ta > tb) - (ta < tb)


@dataclass(frozen=True, eq=False)
class CommGraph:
    """Undirected weighted graph of sensor nodes with planar positions.

    Weights are stored rather than recomputed, so every consumer sees the same
    bit pattern for a given edge.
    """

    positions: Mapping[NodeId, Position]
    edges: frozenset[EdgeKey] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        for e in self.edges:
            if e.lo >= e.hi:
                raise ValueError(f"malformed edge key {e}")
            if e.lo not in self.positions or e.hi not in self.positions:
                raise UnknownNode(f"edge {e} references an unknown node")

    @classmethod
    def from_pairs(
        cls, positions: Mapping[NodeId, Position], pairs: Iterable[tuple[NodeId, NodeId]]
    ) -> CommGraph:
        """Build a graph whose edge weights are the Euclidean distances."""
        positions = dict(positions)
        edges = frozenset(
            EdgeKey.of(math.dist(positions[u], positions[v]), u, v) for u, v in pairs
        )
        return cls(positions, edges)

    @classmethod
    def within_radius(cls, positions: Mapping[NodeId, Position], radius: float) -> CommGraph:
        """Unit-disk graph: connect every pair at distance <= radius."""
        positions = dict(positions)
        ids = sorted(positions)
        edges = []
        for i, u in enumerate(ids):
            pu = positions[u]
            for v in ids[i + 1:]:
                d = math.dist(pu, positions[v])
                if d <= radius:
                    edges.append(EdgeKey(d, u, v))
        return cls(positions, frozenset(edges))

    @property
    def nodes(self) -> frozenset[NodeId]:
        return frozenset(self.positions)

    @cached_property
    def incident(self) -> dict[NodeId, tuple[EdgeKey, ...]]:
        """Incident edges of every node, sorted by edge order."""
        adj: dict[NodeId, list[EdgeKey]] = {v: [] for v in self.positions}
        for e in self.edges:
            adj[e.lo].append(e)
            adj[e.hi].append(e)
        return {v: tuple(sorted(es)) for v, es in adj.items()}

    def neighbors(self, v: NodeId) -> list[NodeId]:
        return [e.other(v) for e in self.incident[v]]

    def edge_between(self, u: NodeId, v: NodeId) -> EdgeKey | None:
        for e in self.incident[u]:
            if e.other(u) == v:
                return e
        return None

    def total_weight(self, edges: Iterable[EdgeKey] | None = None) -> float:
        return math.fsum(e.weight for e in (self.edges if edges is None else edges))

    def dumps(self) -> str:
        """Serialize to the line-oriented ``node``/``edge`` text format."""
        lines = [f"node {v} {x!r} {y!r}" for v, (x, y) in sorted(self.positions.items())]
        lines += [f"edge {e.lo} {e.hi} {e.weight!r}" for e in sorted(self.edges)]
        return "\n".join(lines) + "\n"

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str) -> CommGraph:
        positions: dict[NodeId, Position] = {}
        edges: list[EdgeKey] = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            try:
                if parts[0] == "node" and len(parts) == 4:
                    nid = int(parts[1])
                    if nid < 0 or nid in positions:
                        raise ValueError(f"bad or duplicate node id {nid}")
                    positions[nid] = (float(parts[2]), float(parts[3]))
                elif parts[0] == "edge" and len(parts) == 4:
                    edges.append(EdgeKey.of(float(parts[3]), int(parts[1]), int(parts[2])))
                else:
                    raise ValueError(f"unrecognised record {parts[0]!r}")
            except ValueError as exc:
                raise ConfigError(f"graph line {lineno}: {exc}") from None
        if len({(e.lo, e.hi) for e in edges}) != len(edges):
            raise ConfigError("graph file lists an edge twice")
        try:
            return cls(positions, frozenset(edges))
        except (UnknownNode, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str | Path) -> CommGraph:
        return cls.loads(Path(path).read_text(encoding="utf-8"))


ReducedGraph = CommGraph
AggregationTree = frozenset[EdgeKey]


def generate_rgg(n: int, radius: float, seed: int, side: float = 1.0) -> CommGraph:
    """Random geometric graph: n nodes uniform in a side x side square.

    Node ids are ``0..n-1`` in draw order. The result may be disconnected.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    if not radius >= 0:
        raise ValueError("radius must be non-negative")
    rng = random.Random(seed)
    positions = {i: (rng.random() * side, rng.random() * side) for i in range(n)}
    return CommGraph.within_radius(positions, radius)


def oracle_msf(g: CommGraph) -> frozenset[EdgeKey]:
    """Kruskal minimum spanning forest under edge order."""
    dsu = DisjointSet(g.positions)
    return frozenset(e for e in sorted(g.edges) if dsu.union(e.lo, e.hi))


def oracle_mst(g: CommGraph) -> frozenset[EdgeKey]:
    tree = oracle_msf(g)
    if len(tree) != max(len(g.positions) - 1, 0):
        raise DisconnectedGraph(f"graph with {len(g.positions)} nodes is not connected")
    return tree


def remove_nodes(g: CommGraph, faulty: Iterable[NodeId]) -> CommGraph:
    faulty = frozenset(faulty)
    if not faulty:
        raise ValueError("faulty set is empty")
    unknown = faulty - g.nodes
    if unknown:
        raise UnknownNode(f"unknown node ids: {sorted(unknown)}")
    positions = {v: p for v, p in g.positions.items() if v not in faulty}
    edges = frozenset(e for e in g.edges if e.lo not in faulty and e.hi not in faulty)
    return CommGraph(positions, edges)


def components(g: CommGraph) -> list[frozenset[NodeId]]:
    """Connected components, each found by BFS from its smallest id."""
    seen: set[NodeId] = set()
    out = []
    for start in sorted(g.positions):
        if start in seen:
            continue
        comp = {start}
        queue = deque([start])
        while queue:
            u = queue.popleft()
            for w in g.neighbors(u):
                if w not in comp:
                    comp.add(w)
                    queue.append(w)
        seen |= comp
        out.append(frozenset(comp))
    return out


def is_connected(g: CommGraph) -> bool:
    return len(components(g)) <= 1
