"""Assemble a runnable session from a validated RunConfig.

Cross-references (role overrides, orchestrator order, service bindings) are
resolved here, before any agent starts. The session owns the clock, the
service hub, the runtime, and the optional metrics exporters.
"""

from __future__ import annotations

import asyncio
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

from .clock import Clock, VirtualClock, WallClock
from .config import CONTAINER_KIND, HTTP_KIND, RunConfig, SIM_KIND
from .errors import ConfigError
from .metrics import MetricsHTTPServer, MetricsJsonlWriter, MetricsRegistry, RunMetrics
from .model import TaskInput
from .runtime import AgentRuntime, OutputWriter
from .services import (
    ContainerPool,
    HttpLLMService,
    ReplicaRegistry,
    ServiceHub,
    ServiceReplica,
    SimLLMService,
)
from .store import ObjectStore
from .workloads import HTTP, SIM, WorkloadContext, WorkloadPlan, build_workload

log = logging.getLogger(__name__)

ENV_LLM_URL = "P2PFLOW_LLM_URL"


@dataclass
class Session:
    config: RunConfig
    clock: Clock
    metrics: MetricsRegistry
    hub: ServiceHub
    plan: WorkloadPlan
    runtime: AgentRuntime
    store: ObjectStore
    metrics_server: MetricsHTTPServer | None = None
    jsonl_writer: MetricsJsonlWriter | None = None

    def run(self, partitions: list[list[TaskInput]]) -> RunMetrics:
        """Execute partitions to completion under the configured clock."""
        if self.metrics_server is not None:
            self.metrics_server.start()
        if self.jsonl_writer is not None:
            self.jsonl_writer.start()
        try:
            return asyncio.run(self._run(partitions))
        finally:
            if self.jsonl_writer is not None:
                self.jsonl_writer.stop()
            if self.metrics_server is not None:
                self.metrics_server.stop()

    async def _run(self, partitions: list[list[TaskInput]]) -> RunMetrics:
        async def main():
            try:
                return await self.runtime.run_partitions(
                    partitions,
                    self.plan.orch_factory,
                    per_partition_limit=self.config.workload_params.get(
                        "per_partition_concurrency"
                    ),
                )
            finally:
                await self.runtime.stop()

        return await self.clock.run(main())

    @property
    def output_lines(self) -> list[str]:
        return self.runtime.output.lines


def _build_services(config: RunConfig, registry: ReplicaRegistry, clock, metrics) -> ServiceHub:
    hub = ServiceHub(registry)
    for name, svc in config.services.items():
        if svc.kind == CONTAINER_KIND:
            hub.add_container_pool(name, ContainerPool(svc.capacity, clock))
            continue
        if svc.kind == SIM_KIND:
            for i in range(svc.replicas):
                label = svc.labels[i % len(svc.labels)] if svc.labels else "permanent"
                registry.register(
                    name,
                    ServiceReplica(
                        replica_id=f"r{i}", capacity=svc.capacity, node_label=label
                    ),
                )
            hub.add_llm(
                SimLLMService(
                    name, registry, svc.latency, clock, metrics, config.retry_limit
                )
            )
            continue
        endpoints = list(svc.endpoints)
        if not endpoints:
            env_url = os.environ.get(ENV_LLM_URL)
            if not env_url:
                raise ConfigError(
                    f"services.{name}.endpoints",
                    f"http service needs endpoints or ${ENV_LLM_URL}",
                )
            endpoints = [env_url]
        for i, endpoint in enumerate(endpoints):
            registry.register(
                name,
                ServiceReplica(replica_id=f"r{i}", endpoint=endpoint, capacity=svc.capacity),
            )
        hub.add_llm(
            HttpLLMService(
                name, registry, svc.model, clock, metrics, retry_limit=config.retry_limit
            )
        )
    return hub


def build_session(config: RunConfig, output_path: str | None = None) -> Session:
    clock: Clock = VirtualClock() if config.clock == "virtual" else WallClock()
    metrics = MetricsRegistry(clock)
    registry = ReplicaRegistry(clock, config.refresh_interval_seconds)
    hub = _build_services(config, registry, clock, metrics)

    llm_service = config.workload_params.get("service", "llm")
    container_service = config.workload_params.get("container_service", "containers")
    if llm_service not in hub.llm_services:
        raise ConfigError(f"services.{llm_service}", "workload requires this LLM service")
    if config.workload == "tau2_like" and container_service not in hub.container_pools:
        raise ConfigError(
            f"services.{container_service}", "tau2_like requires a container_pool service"
        )
    mode = HTTP if config.services[llm_service].kind == HTTP_KIND else SIM

    params = {
        k: v
        for k, v in config.workload_params.items()
        if k not in ("service", "container_service", "per_partition_concurrency")
    }
    ctx = WorkloadContext(
        params=params,
        run_seed=config.seed,
        budget=config.budget,
        hub=hub,
        mode=mode,
        llm_service=llm_service,
        container_service=container_service,
    )
    plan = build_workload(config.workload, ctx, metrics)

    role_names = set(plan.role_names)
    for role, override in config.roles.items():
        if role not in role_names:
            raise ConfigError(
                f"roles.{role}", f"unknown role for workload {plan.name}; has {sorted(role_names)}"
            )
        for cfg in plan.role_configs:
            if cfg.name == role:
                cfg.num_instances = override["num_instances"]

    if config.orchestrator_order is not None:
        unknown = [r for r in config.orchestrator_order if r not in role_names]
        if unknown:
            raise ConfigError(
                "orchestrator.order", f"unknown role {unknown[0]!r} for workload {plan.name}"
            )
        if plan.control_kind != "sequential":
            raise ConfigError(
                "orchestrator.order", f"workload {plan.name} uses branching control flow"
            )
        base_factory = plan.orch_factory
        order = list(config.orchestrator_order)

        def ordered_factory(task: TaskInput):
            orch = base_factory(task)
            orch.control.order = list(order)
            return orch

        plan.orch_factory = ordered_factory

    max_concurrency = config.max_concurrency
    if plan.max_concurrency_cap is not None and plan.max_concurrency_cap < max_concurrency:
        log.info(
            "clamping max_concurrency %d to %d (container pool capacity)",
            max_concurrency,
            plan.max_concurrency_cap,
        )
        max_concurrency = plan.max_concurrency_cap

    store = ObjectStore(clock=clock)
    runtime = AgentRuntime(
        plan.role_configs,
        services=hub,
        store=store,
        metrics=metrics,
        clock=clock,
        max_concurrency=max_concurrency,
        mailbox_capacity=config.mailbox_capacity,
        offload_threshold_bytes=config.offload_threshold_bytes,
        output=OutputWriter(output_path or config.output),
        completion_hooks=plan.completion_hooks,
    )
    metrics_server = (
        MetricsHTTPServer(metrics, config.metrics_port)
        if config.metrics_port is not None
        else None
    )
    jsonl_writer = (
        MetricsJsonlWriter(metrics, config.metrics_jsonl)
        if config.metrics_jsonl
        else None
    )
    return Session(
        config=config,
        clock=clock,
        metrics=metrics,
        hub=hub,
        plan=plan,
        runtime=runtime,
        store=store,
        metrics_server=metrics_server,
        jsonl_writer=jsonl_writer,
    )


def read_input(path: str, data_parallelism: int) -> list[list[TaskInput]]:
    """Load task partitions: a directory's files, or line-ranges of one file."""
    p = Path(path)
    if p.is_dir():
        files = sorted(f for f in p.iterdir() if f.is_file())
        partitions = [_read_file(f) for f in files]
        return [part for part in partitions if part]
    tasks = _read_file(p)
    if not tasks:
        return []
    if data_parallelism <= 1:
        return [tasks]
    chunk = (len(tasks) + data_parallelism - 1) // data_parallelism
    return [tasks[i : i + chunk] for i in range(0, len(tasks), chunk)]


def _read_file(path: Path) -> list[TaskInput]:
    tasks = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            payload = json.loads(line)
            if not isinstance(payload, dict):
                raise ConfigError(str(path), f"line {lineno + 1}: expected a JSON object")
            task_id = str(payload.get("task_id", f"{path.stem}:{lineno}"))
            tasks.append(TaskInput(task_id=task_id, payload=payload))
    return tasks
