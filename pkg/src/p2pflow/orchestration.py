"""Orchestrator state machines: sequential round-robin and branching control.

An update consumes one :class:`StepResult`, appends the turn to history,
decides who acts next, and terminates the task on a done signal, a filter
decision, or a budget ceiling. Updates mutate in place: ownership of an
orchestrator always rests with exactly one agent, and transfers only by
message passing.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Collection

from .errors import AlreadyDone, InvalidState, UnknownRole
from .model import (
    BRANCHING,
    SEQUENTIAL,
    SINK_ROLE,
    Budget,
    ControlState,
    HistoryEntry,
    InlineContent,
    Orchestrator,
    TaskInput,
    TaskOutcome,
    derive_seed,
)
from .store import ObjectStore, offload_history

BUDGET_REASON = "budget"


@dataclass
class StepResult:
    """What one agent produced for one turn.

    ``route_hint`` and ``filtered_reason`` are honored only by branching
    orchestrators; sequential ones follow their fixed order.
    """

    author_role: str
    content: bytes = b""
    token_count: int = 0
    done_signal: bool = False
    route_hint: str | None = None
    filtered_reason: str | None = None
    score: float | None = None


def make_sequential(
    task: TaskInput, order: list[str], rng_seed: int, budget: Budget | None = None
) -> Orchestrator:
    if not order:
        raise InvalidState("sequential order must be non-empty")
    return Orchestrator(
        task=task,
        control=ControlState(kind=SEQUENTIAL, order=list(order)),
        rng_seed=rng_seed,
        budget=budget or Budget(),
    )


def make_branching(
    task: TaskInput, entry_role: str, rng_seed: int, budget: Budget | None = None
) -> Orchestrator:
    return Orchestrator(
        task=task,
        control=ControlState(kind=BRANCHING, next_role_override=entry_role),
        rng_seed=rng_seed,
        budget=budget or Budget(),
    )


def current_agent(orch: Orchestrator) -> str:
    """Role that should process the orchestrator next; the sink once done."""
    control = orch.control
    if control.is_done:
        return SINK_ROLE
    if control.kind == SEQUENTIAL:
        return control.order[control.index]
    if control.next_role_override is None:
        raise InvalidState(
            f"branching orchestrator {orch.task.task_id} has no next role and is not done"
        )
    return control.next_role_override


def mark_done(orch: Orchestrator, outcome: TaskOutcome) -> Orchestrator:
    if orch.outcome is not None:
        raise AlreadyDone(f"task {orch.task.task_id} already has outcome {orch.outcome.status}")
    orch.outcome = outcome
    orch.control.is_done = True
    return orch


def _append_entry(
    orch: Orchestrator,
    result: StepResult,
    store: ObjectStore | None,
    offload_threshold: int | None,
) -> None:
    entry = HistoryEntry(
        author_role=result.author_role,
        turn_index=len(orch.history),
        content=InlineContent(result.content),
        declared_size_bytes=len(result.content),
        token_count=result.token_count,
    )
    if store is not None:
        offload_history(entry, offload_threshold, store)
    orch.history.append(entry)


def _budget_hit(orch: Orchestrator) -> bool:
    return (
        orch.turns() >= orch.budget.max_turns
        or orch.tokens_total() >= orch.budget.max_total_tokens
    )


def sequential_update(
    orch: Orchestrator,
    result: StepResult,
    *,
    store: ObjectStore | None = None,
    offload_threshold: int | None = None,
) -> Orchestrator:
    """Append the turn and advance round-robin; terminate on done or budget."""
    if orch.control.kind != SEQUENTIAL:
        raise InvalidState("sequential_update on a non-sequential orchestrator")
    if orch.control.is_done:
        raise InvalidState("update on a finished orchestrator")
    _append_entry(orch, result, store, offload_threshold)
    control = orch.control
    control.index = (control.index + 1) % len(control.order)
    if result.done_signal:
        mark_done(orch, TaskOutcome.success(score=result.score, tokens=orch.tokens_total()))
    elif _budget_hit(orch):
        mark_done(orch, TaskOutcome.failed(BUDGET_REASON, tokens=orch.tokens_total()))
    return orch


def branching_update(
    orch: Orchestrator,
    result: StepResult,
    *,
    known_roles: Collection[str] | None = None,
    store: ObjectStore | None = None,
    offload_threshold: int | None = None,
) -> Orchestrator:
    """Append the turn and follow the result's routing decision.

    Every turn must either filter, signal done, or name the next role; a
    stale route is never reused.
    """
    if orch.control.kind != BRANCHING:
        raise InvalidState("branching_update on a non-branching orchestrator")
    if orch.control.is_done:
        raise InvalidState("update on a finished orchestrator")
    _append_entry(orch, result, store, offload_threshold)
    orch.control.next_role_override = None
    if result.filtered_reason is not None:
        mark_done(
            orch, TaskOutcome.filtered(result.filtered_reason, tokens=orch.tokens_total())
        )
    elif result.done_signal:
        mark_done(orch, TaskOutcome.success(score=result.score, tokens=orch.tokens_total()))
    elif result.route_hint is not None:
        if known_roles is not None and result.route_hint not in known_roles:
            raise UnknownRole(f"route hint {result.route_hint!r} is not a configured role")
        orch.control.next_role_override = result.route_hint
    if not orch.control.is_done and _budget_hit(orch):
        mark_done(orch, TaskOutcome.failed(BUDGET_REASON, tokens=orch.tokens_total()))
    return orch


def apply_update(
    orch: Orchestrator,
    result: StepResult,
    *,
    known_roles: Collection[str] | None = None,
    store: ObjectStore | None = None,
    offload_threshold: int | None = None,
) -> Orchestrator:
    if orch.control.kind == SEQUENTIAL:
        return sequential_update(orch, result, store=store, offload_threshold=offload_threshold)
    return branching_update(
        orch,
        result,
        known_roles=known_roles,
        store=store,
        offload_threshold=offload_threshold,
    )


def hop_rng(orch: Orchestrator) -> random.Random:
    """Routing stream for the next send: seeded by task seed and hop count."""
    return random.Random(derive_seed(orch.rng_seed, "route", orch.control.hops))


def step_rng(orch: Orchestrator, tag: str = "step") -> random.Random:
    """Per-turn stream for behaviors: seeded by task seed and turn index."""
    return random.Random(derive_seed(orch.rng_seed, tag, len(orch.history)))
