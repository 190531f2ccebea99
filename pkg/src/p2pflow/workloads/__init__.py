"""Reference workloads runnable against the simulated or HTTP service layer."""

from __future__ import annotations

from ..errors import ConfigError
from ..metrics import MetricsRegistry
from .base import HTTP, SIM, WorkloadContext, WorkloadPlan
from . import coral, natural_reasoning, tau2

BUILDERS = {
    "coral": coral.build,
    "natural_reasoning": natural_reasoning.build,
    "tau2_like": tau2.build,
}


def build_workload(name: str, ctx: WorkloadContext, metrics: MetricsRegistry) -> WorkloadPlan:
    try:
        builder = BUILDERS[name]
    except KeyError:
        raise ConfigError("workload", f"unknown workload {name!r}; choose from {sorted(BUILDERS)}")
    return builder(ctx, metrics)


__all__ = [
    "BUILDERS",
    "HTTP",
    "SIM",
    "WorkloadContext",
    "WorkloadPlan",
    "build_workload",
    "coral",
    "natural_reasoning",
    "tau2",
]
