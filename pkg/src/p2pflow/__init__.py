"""p2pflow: peer-to-peer multi-agent workflow runtime.

Tasks travel as serializable orchestrator messages among stateless agent
instances; scheduling is row-level, large contents offload to a shared
object store, and LLM/tool work is delegated to pluggable services.
"""

from .clock import Clock, VirtualClock, WallClock
from .metrics import MetricsRegistry, RunMetrics, prometheus_text
from .model import (
    SINK_ROLE,
    AgentId,
    Budget,
    ControlState,
    HistoryEntry,
    InlineContent,
    OffloadedContent,
    Orchestrator,
    OutcomeStatus,
    TaskInput,
    TaskOutcome,
    derive_seed,
    deserialize_orchestrator,
    history_total_bytes,
    serialize_orchestrator,
)
from .orchestration import (
    StepResult,
    branching_update,
    current_agent,
    make_branching,
    make_sequential,
    mark_done,
    sequential_update,
)
from .runtime import (
    AdmissionGate,
    AgentContext,
    AgentRuntime,
    Mailbox,
    OutputWriter,
    RoleConfig,
    Team,
    create_team,
    route_next,
)
from .store import ObjectStore, StoreStats, offload_history, resolve_history

__version__ = "0.1.0"

__all__ = [
    "AdmissionGate",
    "AgentContext",
    "AgentId",
    "AgentRuntime",
    "Budget",
    "Clock",
    "ControlState",
    "HistoryEntry",
    "InlineContent",
    "Mailbox",
    "MetricsRegistry",
    "ObjectStore",
    "OffloadedContent",
    "Orchestrator",
    "OutcomeStatus",
    "OutputWriter",
    "RoleConfig",
    "RunMetrics",
    "SINK_ROLE",
    "StepResult",
    "StoreStats",
    "TaskInput",
    "TaskOutcome",
    "Team",
    "VirtualClock",
    "WallClock",
    "branching_update",
    "create_team",
    "current_agent",
    "derive_seed",
    "deserialize_orchestrator",
    "history_total_bytes",
    "make_branching",
    "make_sequential",
    "mark_done",
    "offload_history",
    "prometheus_text",
    "resolve_history",
    "route_next",
    "sequential_update",
    "serialize_orchestrator",
]
