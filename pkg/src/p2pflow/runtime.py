"""Peer-to-peer execution substrate.

Each agent instance is an event loop on its own bounded mailbox. Messages
are serialized orchestrators; an instance dequeues strictly in FIFO order
and handles each message as an independent asyncio task, so one awaited
service call never idles the rest of the system and a single instance can
carry thousands of in-flight tasks.

The driver's only job is to wrap each input row in an orchestrator and send
it to the first agent (one send per task, gated by the admission semaphore);
all subsequent coordination travels inside the messages. The reserved
``_sink`` role persists outcomes, deletes offloaded objects, and releases
admission slots.
"""

from __future__ import annotations

import asyncio
import inspect
import json
import logging
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Protocol

from .clock import Clock, WallClock
from .errors import (
    ConfigError,
    DeadAgent,
    DeadContainer,
    NoReplicas,
    NotFound,
    P2PFlowError,
    PoolExhausted,
    ReplicaUnavailable,
    UnknownRole,
)
from .metrics import MetricsRegistry
from .model import (
    SINK_ROLE,
    AgentId,
    Orchestrator,
    OutcomeStatus,
    TaskInput,
    TaskOutcome,
    deserialize_orchestrator,
    serialize_orchestrator,
)
from .orchestration import StepResult, apply_update, current_agent, hop_rng, mark_done
from .services import ServiceHub
from .store import ObjectStore, offloaded_ids, resolve_history

log = logging.getLogger(__name__)

_STOP = object()


class ProcessBehavior(Protocol):
    async def process(self, orch: Orchestrator, ctx: "AgentContext") -> StepResult: ...


@dataclass
class RoleConfig:
    name: str
    behavior: ProcessBehavior | None = None
    num_instances: int = 1
    service: str | None = None
    placement_label: str = "permanent"


class Mailbox:
    """Bounded multi-producer single-consumer FIFO of serialized messages.

    The bound lives in a semaphore rather than the queue itself so the stop
    sentinel can always be enqueued without blocking shutdown.
    """

    def __init__(self, capacity: int, clock: Clock):
        if capacity < 1:
            raise ConfigError("mailbox_capacity", "must be >= 1")
        self.capacity = capacity
        self._queue: asyncio.Queue = asyncio.Queue()
        self._slots = asyncio.Semaphore(capacity)
        self._clock = clock
        self._closed = False

    @property
    def depth(self) -> int:
        return self._queue.qsize()

    async def put(self, raw: bytes) -> None:
        """Enqueue; blocks the sender while the mailbox is full."""
        if self._closed:
            raise DeadAgent("mailbox is closed")
        await self._slots.acquire()
        if self._closed:
            self._slots.release()
            raise DeadAgent("mailbox is closed")
        self._queue.put_nowait(raw)
        self._clock.bump()

    async def get(self):
        item = await self._queue.get()
        if item is not _STOP:
            self._slots.release()
        self._clock.bump()
        return item

    def put_stop_nowait(self) -> None:
        self._queue.put_nowait(_STOP)

    def close(self) -> None:
        self._closed = True


@dataclass
class AgentInstance:
    id: AgentId
    mailbox: Mailbox
    behavior: ProcessBehavior | None
    loop_task: asyncio.Task | None = None
    pending: int = 0


@dataclass
class Team:
    roles: dict[str, list[AgentInstance]] = field(default_factory=dict)

    @property
    def role_names(self) -> list[str]:
        return list(self.roles)

    def instances(self, role: str) -> list[AgentInstance]:
        try:
            return self.roles[role]
        except KeyError:
            raise UnknownRole(role) from None

    def instance(self, agent_id: AgentId) -> AgentInstance:
        instances = self.instances(agent_id.role)
        if not 0 <= agent_id.instance < len(instances):
            raise UnknownRole(f"no instance {agent_id}")
        return instances[agent_id.instance]

    def all_instances(self) -> list[AgentInstance]:
        return [inst for group in self.roles.values() for inst in group]


def create_team(
    configs: list[RoleConfig], *, mailbox_capacity: int, clock: Clock | None = None
) -> Team:
    """Instantiate every role's agents with their own mailboxes.

    The reserved sink role is added automatically when absent. Event loops
    are attached later by the runtime.
    """
    clock = clock or WallClock()
    team = Team()
    names = [cfg.name for cfg in configs]
    dupes = {n for n in names if names.count(n) > 1}
    if dupes:
        raise ConfigError("roles", f"duplicate role names: {sorted(dupes)}")
    all_configs = list(configs)
    if SINK_ROLE not in names:
        all_configs.append(RoleConfig(name=SINK_ROLE, behavior=None, num_instances=1))
    for cfg in all_configs:
        if cfg.num_instances < 1:
            raise ConfigError(f"roles.{cfg.name}.num_instances", "must be >= 1")
        if cfg.placement_label != "permanent":
            raise ConfigError(
                f"roles.{cfg.name}.placement_label",
                "agents run only on permanent placements",
            )
        team.roles[cfg.name] = [
            AgentInstance(
                id=AgentId(role=cfg.name, instance=i),
                mailbox=Mailbox(mailbox_capacity, clock),
                behavior=cfg.behavior,
            )
            for i in range(cfg.num_instances)
        ]
    return team


def route_next(team: Team, role: str, rng: random.Random) -> AgentId:
    """Uniformly random instance of the role, drawn from the caller's stream."""
    instances = team.instances(role)
    return instances[rng.randrange(len(instances))].id


class AdmissionGate:
    """Semaphore bounding concurrently in-flight orchestrators.

    Acquired by the driver at dispatch, released by the sink at completion;
    both run on one event loop so the counter needs no extra locking.
    """

    def __init__(self, max_concurrency: int, clock: Clock, metrics: MetricsRegistry):
        if max_concurrency < 1:
            raise ConfigError("max_concurrency", "must be >= 1")
        self.max_concurrency = max_concurrency
        self.in_flight = 0
        self._sem = asyncio.Semaphore(max_concurrency)
        self._clock = clock
        self._metrics = metrics

    async def acquire(self) -> None:
        await self._sem.acquire()
        self.in_flight += 1
        assert self.in_flight <= self.max_concurrency
        self._metrics.set_gauge("in_flight", self.in_flight)
        self._clock.bump()

    def release(self) -> None:
        self.in_flight -= 1
        assert self.in_flight >= 0
        self._metrics.set_gauge("in_flight", self.in_flight)
        self._sem.release()
        self._clock.bump()


@dataclass
class AgentContext:
    """What a behavior sees while processing one message."""

    agent: AgentId
    runtime: "AgentRuntime"

    @property
    def services(self) -> ServiceHub:
        return self.runtime.services

    @property
    def store(self) -> ObjectStore:
        return self.runtime.store

    @property
    def clock(self) -> Clock:
        return self.runtime.clock

    @property
    def metrics(self) -> MetricsRegistry:
        return self.runtime.metrics

    def resolve_history(self, orch: Orchestrator) -> list[bytes]:
        return resolve_history(orch.history, self.runtime.store)


class OutputWriter:
    """Collects one JSON line per completed task; optionally streams to disk."""

    def __init__(self, path: str | None = None):
        self.path = path
        self.lines: list[str] = []
        self._fh = open(path, "w", encoding="utf-8") if path else None

    def write(self, line: str) -> None:
        self.lines.append(line)
        if self._fh is not None:
            self._fh.write(line + "\n")

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def failure_reason(exc: Exception) -> str:
    if isinstance(exc, (ReplicaUnavailable, NoReplicas)):
        return "replica_unavailable"
    if isinstance(exc, PoolExhausted):
        return "pool"
    if isinstance(exc, NotFound):
        return "store_not_found"
    if isinstance(exc, DeadContainer):
        return "dead_container"
    return f"error:{type(exc).__name__}"


CompletionHook = Callable[[Orchestrator, list[bytes]], None]


class AgentRuntime:
    """Owns the team, the admission gate, and the shared subsystems."""

    def __init__(
        self,
        role_configs: list[RoleConfig],
        *,
        services: ServiceHub | None = None,
        store: ObjectStore | None = None,
        metrics: MetricsRegistry | None = None,
        clock: Clock | None = None,
        max_concurrency: int = 64,
        mailbox_capacity: int | None = None,
        offload_threshold_bytes: int | None = 512,
        output: OutputWriter | None = None,
        completion_hooks: list[CompletionHook] | None = None,
    ):
        self.clock = clock or WallClock()
        self.metrics = metrics or MetricsRegistry(self.clock)
        self.services = services or ServiceHub()
        self.store = store or ObjectStore(clock=self.clock)
        self.offload_threshold_bytes = offload_threshold_bytes
        self.output = output or OutputWriter()
        self.completion_hooks = list(completion_hooks or [])
        capacity = mailbox_capacity or 2 * max_concurrency
        self.team = create_team(role_configs, mailbox_capacity=capacity, clock=self.clock)
        self.gate = AdmissionGate(max_concurrency, self.clock, self.metrics)
        self._role_depth: dict[str, int] = {r: 0 for r in self.team.roles}
        self._pending_total = 0
        self._handlers: set[asyncio.Task] = set()
        self._started = False
        self._dispatched = 0
        self._completed = 0
        self._draining = False
        self._done_event: asyncio.Event | None = None
        self._partition_sems: dict[int, asyncio.Semaphore] = {}

    # -- lifecycle ---------------------------------------------------------

    async def start(self) -> None:
        if self._started:
            return
        self._done_event = asyncio.Event()
        for inst in self.team.all_instances():
            inst.loop_task = asyncio.create_task(
                self._instance_loop(inst), name=f"agent:{inst.id}"
            )
        self._started = True

    async def stop(self) -> None:
        if not self._started:
            return
        for inst in self.team.all_instances():
            inst.mailbox.put_stop_nowait()
        for inst in self.team.all_instances():
            if inst.loop_task is not None:
                await inst.loop_task
        if self._handlers:
            await asyncio.gather(*list(self._handlers), return_exceptions=True)
        for inst in self.team.all_instances():
            inst.mailbox.close()
        self.output.close()
        self._started = False

    # -- messaging ---------------------------------------------------------

    async def send(self, target: AgentId, orch: Orchestrator) -> None:
        """Serialize into the target's mailbox; blocks under backpressure."""
        inst = self.team.instance(target)
        raw = serialize_orchestrator(orch)
        self.metrics.inc("mailbox_bytes_total", len(raw))
        self.metrics.inc("mailbox_messages_total")
        await inst.mailbox.put(raw)
        self._set_depth(target.role, +1)

    def _set_depth(self, role: str, delta: int) -> None:
        self._role_depth[role] += delta
        self.metrics.set_gauge(f"queue_depth_{role}", self._role_depth[role])

    async def _forward(self, orch: Orchestrator) -> None:
        role = current_agent(orch)
        target = route_next(self.team, role, hop_rng(orch))
        orch.control.hops += 1
        await self.send(target, orch)

    # -- event loops -------------------------------------------------------

    async def _instance_loop(self, inst: AgentInstance) -> None:
        while True:
            raw = await inst.mailbox.get()
            if raw is _STOP:
                break
            self._set_depth(inst.id.role, -1)
            self.metrics.inc("mailbox_dequeues_total")
            orch = deserialize_orchestrator(raw)
            if inst.id.role == SINK_ROLE:
                await self._sink_handle(orch)
                continue
            inst.pending += 1
            self._pending_total += 1
            self.metrics.set_gauge(f"pending_tasks_{inst.id.role}", self._role_pending(inst.id.role))
            self.metrics.set_gauge("pending_tasks", self._pending_total)
            task = asyncio.create_task(self._guarded_step(inst, orch))
            self._handlers.add(task)
            task.add_done_callback(lambda t, i=inst: self._handler_done(t, i))

    def _role_pending(self, role: str) -> int:
        return sum(i.pending for i in self.team.instances(role))

    def _handler_done(self, task: asyncio.Task, inst: AgentInstance) -> None:
        self._handlers.discard(task)
        inst.pending -= 1
        self._pending_total -= 1
        self.metrics.set_gauge(f"pending_tasks_{inst.id.role}", self._role_pending(inst.id.role))
        self.metrics.set_gauge("pending_tasks", self._pending_total)
        if not task.cancelled() and task.exception() is not None:
            log.error("handler crashed on %s", inst.id, exc_info=task.exception())
            self.metrics.inc("runtime_errors_total")

    async def _guarded_step(self, inst: AgentInstance, orch: Orchestrator) -> None:
        try:
            await self.event_loop_step(inst, orch)
        except Exception as exc:  # the loop must survive any task error
            log.warning("task %s failed at %s: %s", orch.task.task_id, inst.id, exc)
            if orch.outcome is None:
                mark_done(
                    orch,
                    TaskOutcome.failed(failure_reason(exc), tokens=orch.tokens_total()),
                )
            else:
                orch.control.is_done = True
            await self._forward(orch)

    async def event_loop_step(self, inst: AgentInstance, orch: Orchestrator) -> None:
        """Process one message: behavior, state update, forward to next agent."""
        role = current_agent(orch)
        if role == SINK_ROLE:
            # Finished work passing through a worker mailbox goes straight on.
            await self._forward(orch)
            return
        if role != inst.id.role:
            raise UnknownRole(
                f"orchestrator for role {role!r} delivered to {inst.id}"
            )
        assert inst.behavior is not None
        ctx = AgentContext(agent=inst.id, runtime=self)
        try:
            result = await inst.behavior.process(orch, ctx)
        except P2PFlowError as exc:
            mark_done(
                orch, TaskOutcome.failed(failure_reason(exc), tokens=orch.tokens_total())
            )
            await self._forward(orch)
            return
        apply_update(
            orch,
            result,
            known_roles=self.team.roles,
            store=self.store,
            offload_threshold=self.offload_threshold_bytes,
        )
        await self._forward(orch)

    # -- sink ----------------------------------------------------------------

    async def _sink_handle(self, orch: Orchestrator) -> None:
        try:
            materialized = resolve_history(orch.history, self.store)
            self._persist(orch, materialized)
            for hook in self.completion_hooks:
                try:
                    result = hook(orch, materialized)
                    if inspect.isawaitable(result):
                        await result
                except Exception:
                    log.exception("completion hook failed for %s", orch.task.task_id)
                    self.metrics.inc("hook_failures_total")
        except Exception:
            log.exception("persistence failed for %s", orch.task.task_id)
            self.metrics.inc("persist_failures_total")
        finally:
            self.store.delete(offloaded_ids(orch.history))
            self._count_outcome(orch)
            self.gate.release()
            sem = self._partition_sems.get(orch.task.partition_id)
            if sem is not None:
                sem.release()
            self._completed += 1
            if self._draining and self._done_event and self._completed >= self._dispatched:
                self._done_event.set()

    def _persist(self, orch: Orchestrator, materialized: list[bytes]) -> None:
        outcome = orch.outcome or TaskOutcome.failed("missing_outcome")
        record: dict[str, Any] = {
            "task_id": orch.task.task_id,
            "status": outcome.status.value,
            "tokens_generated": outcome.tokens_generated,
            "turns": orch.turns(),
            "history": [
                {
                    "role": entry.author_role,
                    "content": content.decode("utf-8", errors="replace"),
                    "tokens": entry.token_count,
                }
                for entry, content in zip(orch.history, materialized)
            ],
        }
        if outcome.reason is not None:
            record["reason"] = outcome.reason
        if outcome.score is not None:
            record["score"] = outcome.score
        line = json.dumps(record, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        self.output.write(line)
        self.metrics.inc("output_lines_total")

    def _count_outcome(self, orch: Orchestrator) -> None:
        self.metrics.inc("tasks_completed_total")
        outcome = orch.outcome
        if outcome is None:
            self.metrics.inc("tasks_failed_total")
            return
        if outcome.status is OutcomeStatus.SUCCESS:
            self.metrics.inc("tasks_success_total")
        elif outcome.status is OutcomeStatus.FILTERED:
            self.metrics.inc("tasks_filtered_total")
            reason = (outcome.reason or "unknown").replace("-", "_")
            self.metrics.inc(f"tasks_filtered_{reason}_total")
        else:
            self.metrics.inc("tasks_failed_total")

    # -- driving ---------------------------------------------------------------

    async def run_dataset(
        self,
        dataset: Iterable[TaskInput],
        orch_factory: Callable[[TaskInput], Orchestrator],
    ):
        """Dispatch every task exactly once and wait for all to reach the sink."""
        return await self.run_partitions([dataset], orch_factory)

    async def run_partitions(
        self,
        partitions: list[Iterable[TaskInput]],
        orch_factory: Callable[[TaskInput], Orchestrator],
        per_partition_limit: int | None = None,
    ):
        """Drive partitions concurrently; all share the one global gate.

        ``per_partition_limit`` adds a local in-flight bound per partition,
        so the effective cap is min(global, partitions x local).
        """
        if not self._started:
            await self.start()
        assert self._done_event is not None
        self._draining = False
        errors: list[Exception] = []
        self._partition_sems = (
            {pid: asyncio.Semaphore(per_partition_limit) for pid in range(len(partitions))}
            if per_partition_limit
            else {}
        )
        drivers = [
            asyncio.create_task(self._drive(pid, partition, orch_factory, errors))
            for pid, partition in enumerate(partitions)
        ]
        await asyncio.gather(*drivers)
        self._draining = True
        if self._completed >= self._dispatched:
            self._done_event.set()
        await self._done_event.wait()
        self._done_event.clear()
        self._draining = False
        if errors:
            raise errors[0]
        return self.metrics.snapshot()

    async def _drive(
        self,
        pid: int,
        partition: Iterable[TaskInput],
        orch_factory: Callable[[TaskInput], Orchestrator],
        errors: list[Exception],
    ) -> None:
        sem = self._partition_sems.get(pid)
        iterator = iter(partition)
        while True:
            try:
                item = next(iterator)
            except StopIteration:
                return
            except Exception as exc:  # dataset read failure: stop, drain, report
                log.error("dataset read failed: %s", exc)
                errors.append(exc)
                return
            if sem is not None:
                await sem.acquire()
            await self.gate.acquire()
            item.partition_id = pid
            orch = orch_factory(item)
            self._dispatched += 1
            self.metrics.inc("tasks_dispatched_total")
            self.metrics.inc("driver_sends_total")
            await self._forward(orch)
