"""Acceptance suite. Each test carries a ``criterion`` marker; the terminal
summary prints one PASS/FAIL line per criterion."""

from __future__ import annotations

import itertools
import math
import random
import time
from collections import Counter

import pytest

from oracles import brute_force_mst, has_cycle
from scenarios import (
    chain_of_three,
    halving_ladder,
    path_graph,
    single_fault_best_case,
    star_best_case,
)
from treerepair import (
    CommGraph,
    EdgeKey,
    Scenario,
    generate_rgg,
    is_connected,
    oracle_mst,
    remove_nodes,
    run,
)
from treerepair import cli
from treerepair.topology import components
from treerepair.verification import message_bounds

SIZES = {20: 0.4, 50: 0.28, 100: 0.2, 200: 0.15}
TRIALS_PER_SIZE = 130


def single_failure_trials():
    """Seeded connected RGGs with one admissible failure each.

    Odd seeds fail the node of highest tree degree that keeps the graph
    connected, which produces the most clusters; even seeds pick at random.
    """
    out = []
    for n, radius in SIZES.items():
        seed = 0
        made = 0
        while made < TRIALS_PER_SIZE:
            seed += 1
            g = generate_rgg(n, radius, seed)
            if not is_connected(g):
                continue
            rng = random.Random(seed)
            deg = Counter(v for e in oracle_mst(g) for v in (e.lo, e.hi))
            if seed % 2:
                order = sorted(g.nodes, key=lambda v: (-deg[v], v))
            else:
                order = rng.sample(sorted(g.nodes), n)
            for f in order:
                if is_connected(remove_nodes(g, {f})):
                    out.append(Scenario(g, {f}, trace_level="full"))
                    made += 1
                    break
    return out


@pytest.fixture(scope="module")
def single_runs():
    start = time.perf_counter()
    runs = [(s, run(s)) for s in single_failure_trials()]
    return runs, time.perf_counter() - start


def hand_runs():
    out = []
    for build in (chain_of_three, star_best_case, single_fault_best_case, halving_ladder):
        g, faulty = build()
        s = Scenario(g, faulty, trace_level="full")
        out.append((s, run(s)))
    return out


# 1 -------------------------------------------------------------------------

@pytest.mark.criterion(1, "single-failure RGG trials reconstruct the exact oracle MST")
def test_single_failure_exact_mst(single_runs):
    runs, elapsed = single_runs
    assert len(runs) >= 500
    assert {len(s.graph.positions) for s, _ in runs} == set(SIZES)
    for s, res in runs:
        assert res.status == "reconstructed"
        expected = oracle_mst(res.reduced)
        assert res.final_tree == expected
        assert math.fsum(e.weight for e in res.final_tree) - math.fsum(
            e.weight for e in expected) == 0
        assert res.verdicts.mst_equivalent and res.verdicts.weight_delta == 0
    assert elapsed < 60


# 2 -------------------------------------------------------------------------

@pytest.mark.criterion(2, "tree stays acyclic after every round")
def test_acyclic_after_every_round(single_runs):
    runs, _ = single_runs
    for s, res in runs + hand_runs():
        assert res.verdicts.every_round_acyclic and res.verdicts.acyclic
        for r in res.reports:
            assert not has_cycle(r.tree_edges), (sorted(s.faulty), r.round)


@pytest.mark.criterion(2, "tree stays acyclic after every round")
def test_three_cluster_chain():
    g, faulty = chain_of_three()
    res = run(Scenario(g, faulty, trace_level="full"))
    assert [c.id for c in res.initial_clusters] == [2, 4, 9]
    assert res.rounds_used == 1
    assert [(w, a) for w, a, _ in res.reports[0].merges] == [(2, 4), (4, 9)]
    assert not has_cycle(res.final_tree)
    assert res.final_tree == oracle_mst(res.reduced)
    # the commit reaching 9 already carries the final id 2
    commits = [line for line in res.trace if "\tcommit\t" in line]
    assert any(line.endswith("2 2-4:1.0") for line in commits)
    assert any(line.split("\t")[4] == "9" and line.split("\t")[5].startswith("2 ")
               for line in commits)


# 3 -------------------------------------------------------------------------

def moe_of(cluster, reduced):
    out = [e for e in reduced.edges if (e.lo in cluster.members) != (e.hi in cluster.members)]
    return min(out)


@pytest.mark.criterion(3, "every moe leads to the minimum-id cluster: one round")
@pytest.mark.parametrize("build", [star_best_case, single_fault_best_case])
def test_best_case_one_round(build):
    g, faulty = build()
    res = run(Scenario(g, faulty))
    clusters = res.initial_clusters
    smallest = clusters[0]
    assert len(clusters) >= 3
    for c in clusters[1:]:
        e = moe_of(c, res.reduced)
        assert (e.lo in smallest.members) or (e.hi in smallest.members)
    assert res.status == "reconstructed"
    assert res.rounds_used == 1
    assert res.final_tree == oracle_mst(res.reduced)


# 4 -------------------------------------------------------------------------

@pytest.mark.criterion(4, "k=8 pairwise merging finishes in 3 rounds")
def test_halving_three_rounds():
    g, faulty = halving_ladder()
    res = run(Scenario(g, faulty))
    assert res.k == 8
    assert res.rounds_used == math.ceil(math.log2(8)) == 3
    assert [r.clusters_after for r in res.reports] == [4, 2, 1]
    assert res.final_tree == oracle_mst(res.reduced)


@pytest.mark.criterion(4, "k=8 pairwise merging finishes in 3 rounds")
def test_rounds_never_exceed_k_minus_one(single_runs):
    runs, _ = single_runs
    for _, res in runs + hand_runs():
        assert res.rounds_used <= max(res.k - 1, 0)


# 5 -------------------------------------------------------------------------

@pytest.mark.criterion(5, "per-round, reject and ignore message budgets")
def test_message_bounds(single_runs):
    runs, _ = single_runs
    for s, res in runs + hand_runs():
        assert s.trace_level == "full"
        # recount every kind from the full trace
        traced = Counter(line.split("\t")[2] for line in res.trace if not line.startswith("#"))
        assert {k: v for k, v in res.messages_by_kind().items() if v} == dict(traced)
        rejects = 0
        ignores: Counter[int] = Counter()
        for r in res.reports:
            rej = r.failed_tests + r.messages_by_kind["reject"]
            assert r.total_messages - rej <= 6 * sum(r.cluster_sizes.values())
            rejects += rej
            ignores.update(r.ignores_by_cluster)
        assert rejects <= 2 * len(res.reduced.edges)
        assert max(ignores.values(), default=0) <= res.k - 1
        assert message_bounds(res.reports, len(res.reduced.edges), res.k).ok
        assert res.verdicts.message_bound_ok


# 6 -------------------------------------------------------------------------

def multi_failure_trials():
    out = []
    for m in (2, 3):
        seed = 1000 * m
        while sum(1 for s in out if len(s.faulty) == m) < 60:
            seed += 1
            n = (50, 100)[seed % 2]
            g = generate_rgg(n, 0.28 if n == 50 else 0.2, seed)
            if not is_connected(g):
                continue
            rng = random.Random(seed)
            for _ in range(100):
                faulty = frozenset(rng.sample(sorted(g.nodes), m))
                if is_connected(remove_nodes(g, faulty)):
                    out.append(Scenario(g, faulty))
                    break
    return out


@pytest.mark.criterion(6, "simultaneous failures: k <= sum of degrees, exact MST")
def test_multiple_failures():
    trials = multi_failure_trials()
    assert len(trials) >= 100
    for s in trials:
        res = run(s)
        deg = Counter(v for e in s.initial_tree for v in (e.lo, e.hi))
        assert res.k <= sum(deg[f] for f in s.faulty)
        assert res.status == "reconstructed"
        assert res.final_tree == oracle_mst(res.reduced)
        assert res.verdicts.ok


# 7 -------------------------------------------------------------------------

@pytest.mark.criterion(7, "degree-1 failure and disconnected reduced graph")
def test_leaf_failure_needs_no_merge():
    checked = 0
    for seed in range(1, 40):
        g = generate_rgg(30, 0.35, seed)
        if not is_connected(g):
            continue
        deg = Counter(v for e in oracle_mst(g) for v in (e.lo, e.hi))
        leaf = min(v for v in g.nodes if deg[v] == 1)
        res = run(Scenario(g, {leaf}))
        assert res.k == 1
        assert res.status == "reconstructed"
        assert res.rounds_used == 0
        assert sum(len(r.merges) for r in res.reports) == 0
        assert sum(res.messages_by_kind().values()) == 0
        assert res.final_tree == oracle_mst(res.reduced)
        checked += 1
    assert checked >= 10


@pytest.mark.criterion(7, "degree-1 failure and disconnected reduced graph")
@pytest.mark.parametrize("case", ["cut_vertex", "isolated_region"])
def test_disconnected_is_irreparable(case):
    if case == "cut_vertex":
        g, faulty = path_graph(6), {2}
    else:
        g = generate_rgg(40, 0.08, 3)
        assert not is_connected(g)
        faulty = {0}
    res = run(Scenario(g, faulty))
    parts = components(res.reduced)
    assert len(parts) > 1
    assert res.status == "irreparable"
    assert not res.verdicts.spanning
    assert len(res.final_tree) == len(res.reduced.positions) - len(parts)
    assert res.final_tree <= res.reduced.edges
    assert not has_cycle(res.final_tree)


# 8 -------------------------------------------------------------------------

def _cli_outputs(tmp_path, tag, extra):
    out = tmp_path / tag
    out.mkdir()
    argv = ["--trace", str(out / "trace.txt"), "--report", str(out / "report.json"), *extra]
    code = cli.main(argv)
    return code, {p.name: p.read_bytes() for p in sorted(out.iterdir())}


@pytest.mark.criterion(8, "identical traces, reports and CSVs across reruns and modes")
@pytest.mark.parametrize("mode", ["single", "sweep"])
def test_determinism(tmp_path, mode):
    if mode == "single":
        base = ["--rgg", "100,0.2,7", "--fail-random", "2,7"]
    else:
        base = ["--rgg", "60,0.25,11", "--fail-random", "1,5", "--trials", "12",
                "--csv", "CSV_PATH"]
    variants = {
        "a": [], "b": [], "parallel": ["--parallel-delivery"],
    }
    if mode == "sweep":
        variants["jobs"] = ["--jobs", "2"]
    results = {}
    for tag, extra in variants.items():
        argv = [a.replace("CSV_PATH", str(tmp_path / tag / "rows.csv")) for a in base]
        results[tag] = _cli_outputs(tmp_path, tag, argv + extra)
    first_code, first = results["a"]
    assert first_code == 0
    assert set(first) >= {"trace.txt", "report.json"}
    assert first["trace.txt"].count(b"\n") > 100
    for tag, (code, files) in results.items():
        assert code == first_code
        assert files == first, tag


# 9 -------------------------------------------------------------------------

GRID = {0: (0.0, 0.0), 1: (1.0, 0.0), 2: (2.0, 0.0), 3: (0.0, 1.0), 4: (1.0, 1.0), 5: (2.0, 1.0)}


def all_graphs(positions):
    ids = sorted(positions)
    pairs = list(itertools.combinations(ids, 2))
    for mask in range(1 << len(pairs)):
        chosen = [p for i, p in enumerate(pairs) if mask >> i & 1]
        if len(chosen) >= len(ids) - 1:
            yield CommGraph.from_pairs(positions, chosen)


def _check_oracle(g):
    if not is_connected(g):
        return False
    expected, min_weight = brute_force_mst(g)
    got = oracle_mst(g)
    assert got == expected
    assert math.isclose(g.total_weight(got), min_weight, rel_tol=0, abs_tol=1e-12)
    return True


@pytest.mark.criterion(9, "oracle MST equals exhaustive enumeration on small graphs")
@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_oracle_exhaustive_small(n):
    rng = random.Random(n)
    tied = {v: GRID[v] for v in range(n)}
    scattered = {v: (rng.random(), rng.random()) for v in range(n)}
    equal = {v: (math.cos(2 * math.pi * v / n), math.sin(2 * math.pi * v / n)) for v in range(n)}
    checked = 0
    for positions in (tied, scattered, equal):
        checked += sum(_check_oracle(g) for g in all_graphs(positions))
    assert checked > 0


@pytest.mark.criterion(9, "oracle MST equals exhaustive enumeration on small graphs")
def test_oracle_exhaustive_six_nodes():
    rng = random.Random(6)
    pairs = list(itertools.combinations(range(6), 2))
    checked = 0
    # the complete 2x3 grid is dense in equal weights
    assert _check_oracle(CommGraph.from_pairs(GRID, pairs))
    while checked < 300:
        positions = GRID if checked % 2 else {v: (rng.random(), rng.random()) for v in range(6)}
        chosen = [p for p in pairs if rng.random() < 0.5]
        checked += _check_oracle(CommGraph.from_pairs(positions, chosen))
