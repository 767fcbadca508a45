"""Command line runner: single scenarios and seeded sweeps.

Exit codes: 0 all verdicts pass, 2 verification failure, 3 configuration
error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import random
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

from .engine import KIND_LABELS, Scenario, SimResult, TRACE_LEVELS, run
from .errors import ConfigError, UnknownNode
from .topology import CommGraph, NodeId, generate_rgg, is_connected, remove_nodes

log = logging.getLogger("treerepair")

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_IO = 0, 2, 3, 4

CSV_HEADER = (
    "trial,n,edges,k,rounds,status,msgs_find,msgs_test,msgs_accept,msgs_reject,msgs_report,"
    "msgs_inform,msgs_merge_req,msgs_internal,msgs_merge,msgs_commit,msgs_ignore,msgs_modify,"
    "mst_ok,acyclic_ok,bounds_ok"
).split(",")
assert CSV_HEADER[6:18] == [f"msgs_{k}" for k in KIND_LABELS]

FAULT_ATTEMPTS = 100


@dataclass
class RunConfig:
    graph: str | None = None
    rgg: tuple[int, float, int] | None = None
    side: float = 1.0
    fail: tuple[NodeId, ...] | None = None
    fail_random: tuple[int, int] | None = None
    trials: int | None = None
    trace: str | None = None
    report: str | None = None
    csv: str | None = None
    trace_level: str | None = None
    max_rounds: int | None = None
    parallel_delivery: bool = False
    jobs: int = 1
    allow_irreparable: bool = False

    @property
    def mode(self) -> str:
        return "sweep" if self.trials is not None or self.csv is not None else "single"

    def effective_trace_level(self) -> str:
        if self.trace_level is not None:
            return self.trace_level
        return "full" if self.trace else "summary"

    def validate(self) -> None:
        if (self.graph is None) == (self.rgg is None):
            raise ConfigError("exactly one of --graph or --rgg is required")
        if (self.fail is None) == (self.fail_random is None):
            raise ConfigError("exactly one of --fail or --fail-random is required")
        if self.rgg is not None:
            n, radius, _ = self.rgg
            if n < 2 or radius < 0:
                raise ConfigError("--rgg needs n >= 2 and radius >= 0")
        if self.side <= 0:
            raise ConfigError("--side must be positive")
        if self.fail is not None and not self.fail:
            raise ConfigError("--fail needs at least one node id")
        if self.fail_random is not None and self.fail_random[0] < 1:
            raise ConfigError("--fail-random needs m >= 1")
        if self.trials is not None and self.trials < 1:
            raise ConfigError("--trials must be >= 1")
        if self.trace_level is not None and self.trace_level not in TRACE_LEVELS:
            raise ConfigError(f"--trace-level must be one of {TRACE_LEVELS}")
        if self.max_rounds is not None and self.max_rounds < 1:
            raise ConfigError("--max-rounds must be >= 1")
        if self.jobs < 1:
            raise ConfigError("--jobs must be >= 1")


def _ints(text: str, what: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in str(text).split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"{what}: expected comma separated integers, got {text!r}") from None


def _parse_rgg(value) -> tuple[int, float, int]:
    parts = value if isinstance(value, (list, tuple)) else str(value).split(",")
    try:
        n, radius, seed = parts
        return int(n), float(radius), int(seed)
    except (TypeError, ValueError):
        raise ConfigError(f"rgg: expected n,radius,seed, got {value!r}") from None


def _parse_fail_random(value) -> tuple[int, int]:
    parts = value if isinstance(value, (list, tuple)) else _ints(value, "fail-random")
    if len(parts) != 2:
        raise ConfigError(f"fail-random: expected m,seed, got {value!r}")
    return int(parts[0]), int(parts[1])


def load_config_file(path: str) -> dict:
    """Read a JSON config whose keys mirror the long flag names (dashes as underscores)."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path}: top level must be an object")
    known = {f.name for f in fields(RunConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"config {path}: unknown keys {sorted(unknown)}")
    return raw


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="treerepair",
        description="Simulate aggregation-tree reconstruction after sensor node failures.",
    )
    p.add_argument("--config", help="JSON file with default values for the flags below")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--graph", help="graph file in node/edge line format")
    src.add_argument("--rgg", help="random geometric graph: n,radius,seed")
    p.add_argument("--side", type=float, help="side length of the RGG square (default 1)")
    flt = p.add_mutually_exclusive_group()
    flt.add_argument("--fail", help="comma separated faulty node ids")
    flt.add_argument("--fail-random", help="m,seed: pick m faulty nodes keeping the graph connected")
    p.add_argument("--trials", type=int, help="run a sweep of this many seeded trials")
    p.add_argument("--trace", help="write the message trace here")
    p.add_argument("--report", help="write the JSON report here")
    p.add_argument("--csv", help="write one CSV row per trial here")
    p.add_argument("--trace-level", choices=TRACE_LEVELS)
    p.add_argument("--max-rounds", type=int)
    p.add_argument("--parallel-delivery", action="store_true", default=None,
                   help="evaluate nodes of a delivery step on a thread pool")
    p.add_argument("--jobs", type=int, help="worker processes for sweeps")
    p.add_argument("--allow-irreparable", action="store_true", default=None,
                   help="exit 0 when the reduced graph is disconnected")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(argv: list[str] | None) -> tuple[RunConfig, bool]:
    args = build_parser().parse_args(argv)
    values: dict = load_config_file(args.config) if args.config else {}
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    # a flag given on the command line displaces its alternative from the config file
    for a, b in (("graph", "rgg"), ("fail", "fail_random")):
        if getattr(args, a) is not None:
            values.pop(b, None)
        elif getattr(args, b) is not None:
            values.pop(a, None)
    if values.get("rgg") is not None:
        values["rgg"] = _parse_rgg(values["rgg"])
    if values.get("fail") is not None:
        fail = values["fail"]
        values["fail"] = tuple(fail) if isinstance(fail, list) else _ints(fail, "fail")
    if values.get("fail_random") is not None:
        values["fail_random"] = _parse_fail_random(values["fail_random"])
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg, args.verbose


# -- scenario construction --------------------------------------------------

def select_faults(graph: CommGraph, m: int, seed: int) -> tuple[frozenset[NodeId], bool]:
    """Draw m faulty nodes, retrying until the reduced graph is connected.

    Returns the last draw and ``False`` when no admissible draw was found.
    """
    nodes = sorted(graph.nodes)
    if m >= len(nodes):
        raise ConfigError(f"cannot fail {m} of {len(nodes)} nodes")
    rng = random.Random(seed)
    faulty: frozenset[NodeId] = frozenset()
    for _ in range(FAULT_ATTEMPTS):
        faulty = frozenset(rng.sample(nodes, m))
        if is_connected(remove_nodes(graph, faulty)):
            return faulty, True
    return faulty, False


def trial_graph(cfg: RunConfig, trial: int) -> CommGraph:
    if cfg.graph is not None:
        return CommGraph.load(cfg.graph)
    n, radius, seed = cfg.rgg
    return generate_rgg(n, radius, seed + trial, cfg.side)


def trial_scenario(cfg: RunConfig, trial: int) -> Scenario:
    graph = trial_graph(cfg, trial)
    if cfg.fail is not None:
        faulty = frozenset(cfg.fail)
    else:
        m, seed = cfg.fail_random
        faulty, _ = select_faults(graph, m, seed + trial)
    try:
        return Scenario(graph, faulty, max_rounds=cfg.max_rounds,
                        trace_level=cfg.effective_trace_level())
    except (UnknownNode, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def passed(cfg: RunConfig, result: SimResult) -> bool:
    if result.status == "irreparable" and not cfg.allow_irreparable:
        return False
    return bool(result.verdicts.ok)


# -- outputs ------------------------------------------------------------------

def report_dict(scenario: Scenario, result: SimResult) -> dict:
    return {
        "status": result.status,
        "rounds": result.rounds_used,
        "n": len(scenario.graph.positions),
        "live_nodes": len(result.reduced.positions),
        "edges": len(result.reduced.edges),
        "k": result.k,
        "faulty": sorted(scenario.faulty),
        "messages_by_kind": result.messages_by_kind(),
        "per_round": [
            {
                "round": r.round,
                "clusters_before": r.clusters_before,
                "clusters_after": r.clusters_after,
                "merges": [[w, a, e.render()] for w, a, e in r.merges],
                "messages_by_kind": r.messages_by_kind,
                "reject_messages": r.reject_messages,
                "steps": r.steps,
                "terminal": r.terminal,
            }
            for r in result.reports
        ],
        "verdicts": result.verdicts.to_dict(),
        "final_tree": [e.render() for e in sorted(result.final_tree)],
    }


def csv_row(trial: int, scenario: Scenario, result: SimResult) -> list:
    msgs = result.messages_by_kind()
    v = result.verdicts

    def flag(b: bool) -> str:
        return "true" if b else "false"

    return [
        trial, len(scenario.graph.positions), len(result.reduced.edges), result.k,
        result.rounds_used, result.status, *(msgs[k] for k in KIND_LABELS),
        flag(v.mst_equivalent), flag(v.acyclic and v.every_round_acyclic), flag(v.message_bound_ok),
    ]


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write(path: str, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")


def run_trial(cfg: RunConfig, trial: int) -> tuple[Scenario, SimResult]:
    scenario = trial_scenario(cfg, trial)
    return scenario, run(scenario, parallel=cfg.parallel_delivery)


def _sweep_worker(args: tuple[RunConfig, int]) -> tuple[list, bool, list[str], dict]:
    cfg, trial = args
    scenario, result = run_trial(cfg, trial)
    return csv_row(trial, scenario, result), passed(cfg, result), result.trace, \
        report_dict(scenario, result)


def run_single(cfg: RunConfig) -> int:
    scenario, result = run_trial(cfg, 0)
    if cfg.report:
        _write(cfg.report, dumps_json(report_dict(scenario, result)))
    if cfg.trace:
        _write(cfg.trace, "".join(line + "\n" for line in result.trace))
    ok = passed(cfg, result)
    log.info("status=%s rounds=%d k=%d ok=%s", result.status, result.rounds_used, result.k, ok)
    return EXIT_OK if ok else EXIT_VERIFY


def run_sweep(cfg: RunConfig) -> int:
    jobs = [(cfg, t) for t in range(cfg.trials or 1)]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            outcomes = list(pool.map(_sweep_worker, jobs))
    else:
        outcomes = [_sweep_worker(j) for j in jobs]
    rows = [o[0] for o in outcomes]
    all_ok = all(o[1] for o in outcomes)
    if cfg.csv:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        writer.writerows(rows)
        _write(cfg.csv, buf.getvalue())
    if cfg.trace:
        lines = []
        for t, o in enumerate(outcomes):
            lines.append(f"# trial {t}\n")
            lines += [line + "\n" for line in o[2]]
        _write(cfg.trace, "".join(lines))
    if cfg.report:
        summary = {
            "trials": len(rows),
            "passed": sum(o[1] for o in outcomes),
            "status_counts": {
                s: sum(1 for o in outcomes if o[3]["status"] == s)
                for s in ("reconstructed", "irreparable", "round_limit")
            },
            "results": [o[3] for o in outcomes],
        }
        _write(cfg.report, dumps_json(summary))
    log.info("%d trials, all passed=%s", len(rows), all_ok)
    return EXIT_OK if all_ok else EXIT_VERIFY


def main(argv: list[str] | None = None) -> int:
    try:
        cfg, verbose = config_from_args(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return run_sweep(cfg) if cfg.mode == "sweep" else run_single(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
