"""Common shape of a runnable workload: roles, factory, hooks, stages."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from ..model import Budget, Orchestrator, TaskInput
from ..runtime import CompletionHook, RoleConfig
from ..services import ServiceHub

SIM = "sim"
HTTP = "http"


@dataclass
class WorkloadPlan:
    name: str
    role_configs: list[RoleConfig]
    orch_factory: Callable[[TaskInput], Orchestrator]
    control_kind: str = "branching"
    completion_hooks: list[CompletionHook] = field(default_factory=list)
    filter_stages: list[str] = field(default_factory=list)
    sample_dataset: Callable[[int], list[TaskInput]] | None = None
    max_concurrency_cap: int | None = None

    @property
    def role_names(self) -> list[str]:
        return [cfg.name for cfg in self.role_configs]


@dataclass
class WorkloadContext:
    """Everything a workload builder may bind into its behaviors."""

    params: dict
    run_seed: int
    budget: Budget
    hub: ServiceHub | None = None
    mode: str = SIM
    llm_service: str = "llm"
    container_service: str = "containers"
