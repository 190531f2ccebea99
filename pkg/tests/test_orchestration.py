import pytest
from hypothesis import given, strategies as st

from p2pflow import (
    Budget,
    OutcomeStatus,
    StepResult,
    TaskInput,
    TaskOutcome,
    branching_update,
    current_agent,
    mark_done,
    make_branching,
    make_sequential,
    sequential_update,
)
from p2pflow.errors import AlreadyDone, InvalidState, UnknownRole
from p2pflow.model import SINK_ROLE
from p2pflow.orchestration import BUDGET_REASON, apply_update


def seq(order=("a", "b"), max_turns=64):
    return make_sequential(
        TaskInput(task_id="t"), list(order), rng_seed=1, budget=Budget(max_turns=max_turns)
    )


def step(role="a", **kw):
    return StepResult(author_role=role, content=kw.pop("content", b"hi"), **kw)


class TestSequential:
    def test_plain_result_advances_index_and_appends(self):
        orch = sequential_update(seq(), step("a"))
        assert orch.control.index == 1
        assert len(orch.history) == 1
        assert current_agent(orch) == "b"

    def test_index_wraps_around(self):
        orch = seq()
        sequential_update(orch, step("a"))
        sequential_update(orch, step("b"))
        assert orch.control.index == 0
        assert current_agent(orch) == "a"

    def test_done_signal_terminates(self):
        orch = sequential_update(seq(), step("a", done_signal=True))
        assert orch.control.is_done
        assert orch.outcome.status is OutcomeStatus.SUCCESS
        assert current_agent(orch) == SINK_ROLE

    def test_turn_budget_sets_failed_budget(self):
        orch = seq(max_turns=2)
        sequential_update(orch, step("a"))
        sequential_update(orch, step("b"))
        assert orch.control.is_done
        assert orch.outcome.status is OutcomeStatus.FAILED
        assert orch.outcome.reason == BUDGET_REASON

    def test_token_budget_sets_failed_budget(self):
        orch = make_sequential(
            TaskInput(task_id="t"), ["a"], rng_seed=1, budget=Budget(max_total_tokens=100)
        )
        sequential_update(orch, step("a", token_count=150))
        assert orch.outcome.reason == BUDGET_REASON

    def test_done_signal_wins_over_budget(self):
        orch = seq(max_turns=1)
        sequential_update(orch, step("a", done_signal=True, score=0.5))
        assert orch.outcome.status is OutcomeStatus.SUCCESS
        assert orch.outcome.score == 0.5

    def test_route_hint_is_ignored(self):
        orch = sequential_update(seq(), step("a", route_hint="b"))
        assert current_agent(orch) == "b"  # from the order, not the hint
        assert orch.control.next_role_override is None

    def test_update_on_done_raises(self):
        orch = sequential_update(seq(), step("a", done_signal=True))
        with pytest.raises(InvalidState):
            sequential_update(orch, step("b"))

    def test_empty_order_rejected(self):
        with pytest.raises(InvalidState):
            make_sequential(TaskInput(task_id="t"), [], rng_seed=1)


class TestCurrentAgent:
    def test_done_routes_to_sink(self):
        orch = seq()
        mark_done(orch, TaskOutcome.success())
        assert current_agent(orch) == SINK_ROLE

    def test_sequential_indexing(self):
        orch = make_sequential(TaskInput(task_id="t"), ["a", "b", "c"], rng_seed=1)
        orch.control.index = 2
        assert current_agent(orch) == "c"

    def test_branching_override(self):
        orch = make_branching(TaskInput(task_id="t"), "filter", rng_seed=1)
        branching_update(orch, step("filter", route_hint="score"))
        assert current_agent(orch) == "score"

    def test_branching_without_override_raises(self):
        orch = make_branching(TaskInput(task_id="t"), "filter", rng_seed=1)
        orch.control.next_role_override = None
        with pytest.raises(InvalidState):
            current_agent(orch)


class TestBranching:
    def test_filtered_terminates_with_reason(self):
        orch = make_branching(TaskInput(task_id="t"), "filter", rng_seed=1)
        branching_update(orch, step("filter", filtered_reason="filter_by_en"))
        assert orch.control.is_done
        assert orch.outcome.status is OutcomeStatus.FILTERED
        assert orch.outcome.reason == "filter_by_en"

    def test_done_signal_success(self):
        orch = make_branching(TaskInput(task_id="t"), "question", rng_seed=1)
        branching_update(orch, step("question", done_signal=True, content=b"q&a"))
        assert orch.outcome.status is OutcomeStatus.SUCCESS
        assert current_agent(orch) == SINK_ROLE

    def test_unknown_route_hint_raises(self):
        orch = make_branching(TaskInput(task_id="t"), "filter", rng_seed=1)
        with pytest.raises(UnknownRole):
            branching_update(
                orch, step("filter", route_hint="nope"), known_roles={"filter", "score"}
            )

    def test_history_appended_like_sequential(self):
        orch = make_branching(TaskInput(task_id="t"), "filter", rng_seed=1)
        branching_update(orch, step("filter", route_hint="filter"))
        branching_update(orch, step("filter", filtered_reason="filter_by_en"))
        assert [e.turn_index for e in orch.history] == [0, 1]

    def test_budget_applies_to_branching(self):
        orch = make_branching(
            TaskInput(task_id="t"), "a", rng_seed=1, budget=Budget(max_turns=1)
        )
        branching_update(orch, step("a", route_hint="a"))
        assert orch.outcome.reason == BUDGET_REASON


class TestMarkDone:
    def test_fresh_then_done(self):
        orch = seq()
        mark_done(orch, TaskOutcome.success())
        assert orch.control.is_done

    def test_second_mark_done_rejected(self):
        orch = seq()
        mark_done(orch, TaskOutcome.success())
        with pytest.raises(AlreadyDone):
            mark_done(orch, TaskOutcome.failed("x"))

    def test_failed_after_retries_routes_to_sink(self):
        orch = seq()
        mark_done(orch, TaskOutcome.failed("replica_unavailable"))
        assert current_agent(orch) == SINK_ROLE
        assert orch.outcome.reason == "replica_unavailable"


@given(st.integers(min_value=1, max_value=6), st.integers(min_value=0, max_value=40))
def test_index_equals_updates_mod_order_length(order_len, k):
    order = [f"r{i}" for i in range(order_len)]
    orch = make_sequential(TaskInput(task_id="t"), order, rng_seed=1)
    for i in range(k):
        sequential_update(orch, step(order[i % order_len]))
    assert orch.control.index == k % order_len
    assert len(orch.history) == k
    if not orch.control.is_done:
        assert current_agent(orch) != SINK_ROLE


def test_outcome_partition_is_exclusive():
    for result in (
        step("a", done_signal=True),
        step("a", filtered_reason="filter_by_en"),
    ):
        orch = make_branching(TaskInput(task_id="t"), "a", rng_seed=1)
        apply_update(orch, result)
        statuses = [
            orch.outcome.status is OutcomeStatus.SUCCESS,
            orch.outcome.status is OutcomeStatus.FILTERED,
            orch.outcome.status is OutcomeStatus.FAILED,
        ]
        assert sum(statuses) == 1
