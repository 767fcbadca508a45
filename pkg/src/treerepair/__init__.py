"""Distributed reconstruction of an MST aggregation tree after sensor node failures."""

from .engine import RoundReport, Scenario, SimResult, Simulator, inject_faults, run
from .errors import (
    ConfigError,
    DisconnectedGraph,
    MissingTrace,
    ProtocolViolation,
    RoundDivergence,
    TreeRepairError,
    UnknownNode,
)
from .protocol import Cluster, Kind, Message, NodeState, decompose
from .topology import (
    CommGraph,
    EdgeKey,
    edge_order,
    generate_rgg,
    is_connected,
    oracle_msf,
    oracle_mst,
    remove_nodes,
)
from .verification import Verdicts, verify_result

__all__ = [
    "Cluster",
    "CommGraph",
    "ConfigError",
    "DisconnectedGraph",
    "EdgeKey",
    "Kind",
    "Message",
    "MissingTrace",
    "NodeState",
    "ProtocolViolation",
    "RoundDivergence",
    "RoundReport",
    "Scenario",
    "SimResult",
    "Simulator",
    "TreeRepairError",
    "UnknownNode",
    "Verdicts",
    "decompose",
    "edge_order",
    "generate_rgg",
    "inject_faults",
    "is_connected",
    "oracle_msf",
    "oracle_mst",
    "remove_nodes",
    "run",
    "verify_result",
]
