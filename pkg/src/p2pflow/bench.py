"""Row-level vs batch-level scheduling benchmark.

Three pieces:

* a synthetic workload whose per-task service demands are precomputed from a
  seed, so the runtime path and the oracle consume identical durations;
* two executors - the row-level path through the agent runtime, and a
  batch-barrier path that mimics fixed-size batch processing (workers run a
  batch's rows concurrently and only then start their next batch) - sharing
  one simulated service layer under virtual time;
* an independent event-driven makespan oracle that never touches the agent
  runtime.
"""

from __future__ import annotations

import asyncio
import heapq
import itertools
import random
from collections import deque
from dataclasses import asdict, dataclass, field

from .clock import VirtualClock
from .errors import ConfigError
from .metrics import MetricsRegistry
from .model import Budget, TaskInput, derive_seed
from .orchestration import StepResult, make_sequential
from .runtime import AgentRuntime, RoleConfig
from .services import (
    GenerationRequest,
    LatencyModel,
    ReplicaRegistry,
    ServiceHub,
    ServiceReplica,
    SimLLMService,
)

ROW = "row"
BATCH = "batch"


@dataclass
class StageSpec:
    service: str
    latency: LatencyModel


@dataclass
class SyntheticWorkload:
    """Per-task stage demands, derived deterministically from the seed."""

    num_tasks: int
    stages: list[StageSpec]
    drop_probabilities: list[float] = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        if not self.stages:
            raise ConfigError("workload.stages", "must be non-empty")
        if not self.drop_probabilities:
            self.drop_probabilities = [0.0] * len(self.stages)
        if len(self.drop_probabilities) != len(self.stages):
            raise ConfigError("workload.drop_probabilities", "one probability per stage")
        for p in self.drop_probabilities:
            if not 0.0 <= p <= 1.0:
                raise ConfigError("workload.drop_probabilities", f"{p} outside [0, 1]")

    def request_seed(self, task_index: int, stage_index: int) -> int:
        return derive_seed(self.seed, "stage", task_index, stage_index)

    def stage_tokens(self, task_index: int, stage_index: int) -> int:
        return self.stages[stage_index].latency.sample_tokens(
            self.request_seed(task_index, stage_index)
        )

    def dropped_at(self, task_index: int) -> int | None:
        """First stage whose drop draw fires, or None if the task survives."""
        for stage_index, p in enumerate(self.drop_probabilities):
            if p <= 0.0:
                continue
            rng = random.Random(derive_seed(self.seed, "drop", task_index, stage_index))
            if rng.random() < p:
                return stage_index
        return None

    def task_stage_durations(self, task_index: int) -> list[float]:
        """Durations of the stages this task actually executes (drop-truncated)."""
        last = self.dropped_at(task_index)
        n_stages = len(self.stages) if last is None else last + 1
        return [
            self.stages[s].latency.duration(self.stage_tokens(task_index, s))
            for s in range(n_stages)
        ]

    def single_stage_durations(self) -> list[float]:
        """Per-task durations for the makespan oracle (single-stage workloads)."""
        if len(self.stages) != 1:
            raise ConfigError("workload.stages", "oracle comparison needs exactly one stage")
        return [self.task_stage_durations(i)[0] for i in range(self.num_tasks)]

    def total_tokens(self) -> int:
        total = 0
        for task_index in range(self.num_tasks):
            last = self.dropped_at(task_index)
            n_stages = len(self.stages) if last is None else last + 1
            total += sum(self.stage_tokens(task_index, s) for s in range(n_stages))
        return total


@dataclass
class BenchResult:
    makespan_seconds: float
    throughput_tasks_per_second: float
    tokens_per_second: float
    replica_utilization: float
    peak_in_flight: int
    completed: int
    total_tokens: int

    def to_dict(self) -> dict:
        return asdict(self)


def _build_services(
    workload: SyntheticWorkload,
    replicas: int,
    capacity: int,
    clock: VirtualClock,
    metrics: MetricsRegistry,
) -> ServiceHub:
    if replicas < 1:
        raise ConfigError("replicas", "must be >= 1")
    registry = ReplicaRegistry(clock)
    hub = ServiceHub(registry)
    seen: dict[str, LatencyModel] = {}
    for stage in workload.stages:
        if stage.service in seen:
            if seen[stage.service] is not stage.latency:
                raise ConfigError(
                    "workload.stages", f"service {stage.service} bound to two latency models"
                )
            continue
        seen[stage.service] = stage.latency
        for i in range(replicas):
            registry.register(
                stage.service, ServiceReplica(replica_id=f"r{i}", capacity=capacity)
            )
        hub.add_llm(
            SimLLMService(stage.service, registry, stage.latency, clock, metrics=metrics)
        )
    return hub


class _StageBehavior:
    """Runs the task's current stage against the bound service."""

    def __init__(self, workload: SyntheticWorkload):
        self.workload = workload

    async def process(self, orch, ctx) -> StepResult:
        stage_index = orch.turns()
        task_index = orch.task.payload["index"]
        stage = self.workload.stages[stage_index]
        response = await ctx.services.llm(stage.service).generate(
            GenerationRequest(seed=self.workload.request_seed(task_index, stage_index))
        )
        done = (
            self.workload.dropped_at(task_index) == stage_index
            or stage_index + 1 >= len(self.workload.stages)
        )
        return StepResult(
            author_role=ctx.agent.role,
            content=response.content,
            token_count=response.output_token_count,
            done_signal=done,
        )


def _result(
    workload: SyntheticWorkload,
    metrics: MetricsRegistry,
    makespan: float,
    completed: int,
    replicas: int,
    capacity: int,
    peak_gauge: str,
) -> BenchResult:
    snapshot = metrics.snapshot()
    tokens = int(snapshot.counter("tokens_generated_total"))
    busy = snapshot.counter("service_busy_seconds_total")
    denominator = replicas * capacity * makespan
    return BenchResult(
        makespan_seconds=makespan,
        throughput_tasks_per_second=completed / makespan if makespan else 0.0,
        tokens_per_second=tokens / makespan if makespan else 0.0,
        replica_utilization=busy / denominator if denominator else 0.0,
        peak_in_flight=int(snapshot.gauge_peak(peak_gauge)),
        completed=completed,
        total_tokens=tokens,
    )


def run_row_level(
    workload: SyntheticWorkload,
    replicas: int,
    max_concurrency: int,
    capacity: int = 1,
) -> BenchResult:
    """Execute through the agent runtime: every task admitted independently."""
    clock = VirtualClock()
    metrics = MetricsRegistry(clock)
    hub = _build_services(workload, replicas, capacity, clock, metrics)
    runtime = AgentRuntime(
        [RoleConfig("worker", _StageBehavior(workload))],
        services=hub,
        clock=clock,
        metrics=metrics,
        max_concurrency=max_concurrency,
        offload_threshold_bytes=None,
    )
    budget = Budget(max_turns=len(workload.stages) + 1)

    def factory(task: TaskInput):
        return make_sequential(
            task, ["worker"], rng_seed=derive_seed(workload.seed, task.task_id), budget=budget
        )

    dataset = [
        TaskInput(task_id=f"task{i}", payload={"index": i}) for i in range(workload.num_tasks)
    ]

    async def main():
        try:
            await runtime.run_dataset(dataset, factory)
        finally:
            await runtime.stop()
        return clock.now()

    makespan = asyncio.run(clock.run(main()))
    return _result(
        workload,
        metrics,
        makespan,
        int(metrics.counter("tasks_completed_total")),
        replicas,
        capacity,
        "in_flight",
    )


def run_batch_level(
    workload: SyntheticWorkload,
    replicas: int,
    batch_size: int,
    data_parallelism: int,
    capacity: int = 1,
) -> BenchResult:
    """Batch-barrier baseline: a worker's next batch waits for every row in
    its current batch; orchestration is inlined, no agent runtime involved."""
    if batch_size < 1:
        raise ConfigError("batch_size", "must be >= 1")
    if data_parallelism < 1:
        raise ConfigError("data_parallelism", "must be >= 1")
    clock = VirtualClock()
    metrics = MetricsRegistry(clock)
    hub = _build_services(workload, replicas, capacity, clock, metrics)
    indices = list(range(workload.num_tasks))
    batches = deque(
        indices[start : start + batch_size] for start in range(0, len(indices), batch_size)
    )
    in_flight = 0
    peak_gauge = "batch_rows_in_flight"
    completed = 0

    async def process_row(task_index: int) -> None:
        nonlocal in_flight, completed
        in_flight += 1
        metrics.set_gauge(peak_gauge, in_flight)
        dropped = workload.dropped_at(task_index)
        last_stage = len(workload.stages) - 1 if dropped is None else dropped
        for stage_index in range(last_stage + 1):
            stage = workload.stages[stage_index]
            await hub.llm(stage.service).generate(
                GenerationRequest(seed=workload.request_seed(task_index, stage_index))
            )
        completed += 1
        in_flight -= 1
        metrics.set_gauge(peak_gauge, in_flight)

    async def worker() -> None:
        while batches:
            batch = batches.popleft()
            await asyncio.gather(*(process_row(i) for i in batch))

    async def main():
        await asyncio.gather(*(worker() for _ in range(data_parallelism)))
        return clock.now()

    makespan = asyncio.run(clock.run(main()))
    return _result(workload, metrics, makespan, completed, replicas, capacity, peak_gauge)


@dataclass
class BatchMode:
    batch_size: int
    workers: int


def makespan_oracle(
    durations: list[float],
    replicas: int,
    capacity: int,
    mode: str | BatchMode = ROW,
) -> float:
    """Event-driven schedule simulation, independent of the agent runtime.

    One pooled FCFS service of ``replicas x capacity`` slots. Row mode: all
    tasks arrive at t=0 in index order. Batch mode: ``workers`` take batches
    in order; a batch's rows arrive together and the worker's next batch
    waits for all of them.
    """
    for d in durations:
        if not (d >= 0 and d != float("inf")):
            raise ValueError(f"non-finite duration {d}")
    if not durations:
        return 0.0
    slots = replicas * capacity
    free_slots = slots
    waiting: deque[int] = deque()
    events: list[tuple[float, int, str, int]] = []
    seq = itertools.count()
    makespan = 0.0

    if mode == ROW:
        batches: deque[list[int]] = deque([[i] for i in range(len(durations))])
        workers = len(durations)
    else:
        assert isinstance(mode, BatchMode)
        batches = deque(
            list(range(start, min(start + mode.batch_size, len(durations))))
            for start in range(0, len(durations), mode.batch_size)
        )
        workers = mode.workers

    remaining_in_batch: dict[int, int] = {}
    batch_of_task: dict[int, int] = {}
    next_batch_id = itertools.count()

    def start_next_batch(t: float) -> None:
        if not batches:
            return
        batch = batches.popleft()
        batch_id = next(next_batch_id)
        remaining_in_batch[batch_id] = len(batch)
        for task_index in batch:
            batch_of_task[task_index] = batch_id
            waiting.append(task_index)
        drain(t)

    def drain(t: float) -> None:
        nonlocal free_slots
        while free_slots > 0 and waiting:
            task_index = waiting.popleft()
            free_slots -= 1
            heapq.heappush(events, (t + durations[task_index], next(seq), "done", task_index))

    for _ in range(min(workers, len(batches))):
        start_next_batch(0.0)

    while events:
        t, _, _, task_index = heapq.heappop(events)
        makespan = max(makespan, t)
        free_slots += 1
        drain(t)
        batch_id = batch_of_task[task_index]
        remaining_in_batch[batch_id] -= 1
        if remaining_in_batch[batch_id] == 0:
            start_next_batch(t)

    return makespan


def compare_throughput(row: BenchResult, batch: BenchResult) -> float:
    return row.tokens_per_second / batch.tokens_per_second


def bench_report(
    workload: SyntheticWorkload,
    replicas: int,
    capacity: int,
    max_concurrency: int,
    batch_size: int,
    data_parallelism: int,
) -> dict:
    """Run both paths plus the oracle; emitted by the CLI ``bench`` command."""
    row = run_row_level(workload, replicas, max_concurrency, capacity=capacity)
    batch = run_batch_level(
        workload, replicas, batch_size, data_parallelism, capacity=capacity
    )
    report: dict = {
        "row": row.to_dict(),
        "batch": batch.to_dict(),
        "tokens_per_second_ratio": compare_throughput(row, batch),
    }
    if len(workload.stages) == 1:
        durations = workload.single_stage_durations()
        oracle_row = makespan_oracle(durations, replicas, capacity, ROW)
        oracle_batch = makespan_oracle(
            durations, replicas, capacity, BatchMode(batch_size, data_parallelism)
        )
        report["oracle"] = {
            "row_makespan": oracle_row,
            "batch_makespan": oracle_batch,
            "row_delta_fraction": abs(row.makespan_seconds - oracle_row) / oracle_row
            if oracle_row
            else 0.0,
            "batch_delta_fraction": abs(batch.makespan_seconds - oracle_batch) / oracle_batch
            if oracle_batch
            else 0.0,
        }
    return report
