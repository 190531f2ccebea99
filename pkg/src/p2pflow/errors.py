"""Exception taxonomy shared across the runtime."""

from __future__ import annotations


class P2PFlowError(Exception):
    """Base class for all runtime errors."""


class EncodingFailure(P2PFlowError):
    """A value in a task payload cannot be represented in the wire format."""


class ConfigError(P2PFlowError):
    """Invalid run configuration; carries the offending field path."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class InvalidState(P2PFlowError):
    """Orchestrator control state does not admit the requested operation."""


class AlreadyDone(P2PFlowError):
    """Outcome was already recorded for this orchestrator."""


class UnknownRole(P2PFlowError):
    """A role name does not exist in the team configuration."""


class DeadAgent(P2PFlowError):
    """Target agent's event loop has stopped accepting messages."""


class BudgetExceeded(P2PFlowError):
    """Turn or token ceiling reached (converted to a Failed outcome, not raised
    across the runtime boundary)."""


class StoreFull(P2PFlowError):
    """Object store byte budget exceeded."""


class NotFound(P2PFlowError):
    """Object id is unknown or was already deleted."""


class UnknownService(P2PFlowError):
    """Service name was never registered."""


class UnknownReplica(P2PFlowError):
    """Replica id does not exist for the service."""


class ReplicaUnavailable(P2PFlowError):
    """The chosen replica died before the request completed."""


class NoReplicas(P2PFlowError):
    """No live replica remains after refresh; the task fails."""


class PoolExhausted(P2PFlowError):
    """Container pool is at capacity and every slot is owned by a foreign id."""


class DeadContainer(P2PFlowError):
    """Command issued against a released container handle."""


class VirtualTimeDeadlock(P2PFlowError):
    """Virtual clock found no runnable task and no pending sleeper."""
