"""Exception types raised across the package."""


class TreeRepairError(Exception):
    """Base class for all package errors."""


class DisconnectedGraph(TreeRepairError):
    pass


class UnknownNode(TreeRepairError):
    pass


class ProtocolViolation(TreeRepairError):
    """A node received a message its state machine cannot accept."""


class RoundDivergence(TreeRepairError):
    """A subround failed to quiesce within its step budget."""


class MissingTrace(TreeRepairError):
    pass


class ConfigError(TreeRepairError):
    pass
