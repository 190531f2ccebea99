import random
from dataclasses import dataclass, field

import pytest

from p2pflow.bench import (
    BatchMode,
    ROW,
    StageSpec,
    SyntheticWorkload,
    bench_report,
    compare_throughput,
    makespan_oracle,
    run_batch_level,
    run_row_level,
)
from p2pflow.errors import ConfigError
from p2pflow.services import LatencyModel


def constant_workload(n, tokens=100, seed=1):
    latency = LatencyModel(base_seconds=0.0, seconds_per_output_token=0.01, token_fixed=tokens)
    return SyntheticWorkload(num_tasks=n, stages=[StageSpec("svc", latency)], seed=seed)


def lognormal_workload(n, sigma=1.0, seed=1):
    latency = LatencyModel(
        base_seconds=0.0,
        seconds_per_output_token=0.01,
        token_mu=4.6,
        token_sigma=sigma,
        token_max=100_000,
    )
    return SyntheticWorkload(num_tasks=n, stages=[StageSpec("svc", latency)], seed=seed)


@dataclass
class _TableTokens(LatencyModel):
    """Test-only latency: explicit per-request-seed token counts."""

    table: dict = field(default_factory=dict)

    def sample_tokens(self, seed: int) -> int:
        return self.table[seed]


class TestOracleHandChecked:
    def test_row_four_unit_tasks_two_slots(self):
        assert makespan_oracle([1, 1, 1, 1], replicas=2, capacity=1, mode=ROW) == 2.0

    def test_batch_barrier_at_straggler(self):
        assert (
            makespan_oracle([1, 1, 1, 10], replicas=4, capacity=1, mode=BatchMode(4, 1)) == 10.0
        )

    def test_row_straggler_admits_follow_on_work(self):
        assert makespan_oracle([1, 1, 1, 10], replicas=4, capacity=1, mode=ROW) == 10.0
        # 8 tasks, long job first: row fills freed slots, batch pays the barrier
        durations = [10, 1, 1, 1, 1, 1, 1, 1]
        assert makespan_oracle(durations, replicas=4, capacity=1, mode=ROW) == 10.0
        assert makespan_oracle(durations, replicas=4, capacity=1, mode=BatchMode(4, 1)) == 11.0

    def test_empty_and_validation(self):
        assert makespan_oracle([], 1, 1, ROW) == 0.0
        with pytest.raises(ValueError):
            makespan_oracle([float("inf")], 1, 1, ROW)

    def test_capacity_multiplies_slots(self):
        assert makespan_oracle([1] * 8, replicas=2, capacity=4, mode=ROW) == 1.0

    def test_batch_workers_overlap(self):
        # two workers, batch_size 2, 2 slots: batches run in parallel pairs
        assert makespan_oracle([1, 1, 1, 1], 2, 1, BatchMode(2, 2)) == 2.0


def test_row_oracle_never_worse_than_batch_200_random_instances():
    rng = random.Random(777)
    for _ in range(200):
        n = rng.randint(1, 40)
        durations = [rng.choice([0.1, 0.5, 1.0, 2.0, 10.0]) for _ in range(n)]
        replicas = rng.randint(1, 4)
        capacity = rng.randint(1, 3)
        batch_size = rng.randint(1, 10)
        workers = rng.randint(1, 4)
        row = makespan_oracle(durations, replicas, capacity, ROW)
        batch = makespan_oracle(durations, replicas, capacity, BatchMode(batch_size, workers))
        assert row <= batch + 1e-9, (durations, replicas, capacity, batch_size, workers)


class TestRowLevelRuntime:
    def test_constant_times_single_slot_sequential_bound(self):
        workload = constant_workload(20, tokens=100)  # 1.0s per task
        result = run_row_level(workload, replicas=1, max_concurrency=8, capacity=1)
        assert result.completed == 20
        assert result.makespan_seconds == pytest.approx(20.0, abs=1e-6)
        assert result.total_tokens == 2000

    def test_heterogeneous_matches_oracle_within_5pct(self):
        workload = lognormal_workload(300, seed=5)
        result = run_row_level(workload, replicas=4, max_concurrency=32, capacity=2)
        oracle = makespan_oracle(workload.single_stage_durations(), 4, 2, ROW)
        assert result.makespan_seconds == pytest.approx(oracle, rel=0.05)

    def test_saturated_utilization(self):
        workload = lognormal_workload(400, seed=9)
        result = run_row_level(workload, replicas=4, max_concurrency=16, capacity=2)
        assert result.replica_utilization >= 0.95

    def test_peak_in_flight_bounded_by_concurrency(self):
        workload = constant_workload(50)
        result = run_row_level(workload, replicas=2, max_concurrency=10, capacity=2)
        assert result.peak_in_flight == 10


class TestBatchLevelRuntime:
    def test_batch_size_one_degenerates_to_row(self):
        workload = lognormal_workload(400, seed=3)
        row = run_row_level(workload, replicas=2, max_concurrency=20, capacity=5)
        batch = run_batch_level(workload, replicas=2, batch_size=1, data_parallelism=20, capacity=5)
        assert compare_throughput(row, batch) == pytest.approx(1.0, abs=0.05)

    def test_straggler_batches_match_oracle_and_dip_utilization(self):
        n = 400
        latency = _TableTokens(base_seconds=0.0, seconds_per_output_token=0.01)
        workload = SyntheticWorkload(num_tasks=n, stages=[StageSpec("svc", latency)], seed=4)
        for i in range(n):
            latency.table[workload.request_seed(i, 0)] = 10_000 if i % 50 == 49 else 100
        batch = run_batch_level(workload, replicas=2, batch_size=50, data_parallelism=2, capacity=10)
        oracle = makespan_oracle(workload.single_stage_durations(), 2, 10, BatchMode(50, 2))
        assert batch.makespan_seconds == pytest.approx(oracle, rel=0.05)
        row = run_row_level(workload, replicas=2, max_concurrency=100, capacity=10)
        assert row.replica_utilization > batch.replica_utilization
        assert compare_throughput(row, batch) > 1.0

    def test_constant_durations_make_batching_free(self):
        workload = constant_workload(500)
        row = run_row_level(workload, replicas=2, max_concurrency=100, capacity=5)
        batch = run_batch_level(workload, replicas=2, batch_size=50, data_parallelism=2, capacity=5)
        assert compare_throughput(row, batch) == pytest.approx(1.0, abs=0.1)

    def test_task_concurrency_beats_more_partitions(self):
        # same worker count, 50 rows per batch vs 1: concurrency starves the
        # service in the single-row shape, a qualitative 3-4x throughput gap
        workload = lognormal_workload(2000, seed=17)
        wide = run_batch_level(workload, replicas=4, batch_size=50, data_parallelism=8, capacity=10)
        narrow = run_batch_level(workload, replicas=4, batch_size=1, data_parallelism=8, capacity=10)
        gap = wide.tokens_per_second / narrow.tokens_per_second
        assert gap >= 3.0, gap

    def test_validation(self):
        with pytest.raises(ConfigError):
            run_batch_level(constant_workload(4), replicas=1, batch_size=0, data_parallelism=1)
        with pytest.raises(ConfigError):
            SyntheticWorkload(num_tasks=4, stages=[])


class TestWorkloadPlan:
    def test_drop_truncates_stage_durations(self):
        latency = LatencyModel(token_fixed=10)
        workload = SyntheticWorkload(
            num_tasks=200,
            stages=[StageSpec("a", latency), StageSpec("b", latency)],
            drop_probabilities=[0.5, 0.0],
            seed=11,
        )
        dropped = [i for i in range(200) if workload.dropped_at(i) == 0]
        survived = [i for i in range(200) if workload.dropped_at(i) is None]
        assert dropped and survived
        assert len(workload.task_stage_durations(dropped[0])) == 1
        assert len(workload.task_stage_durations(survived[0])) == 2
        assert 40 <= len(dropped) <= 160  # sanity for p=0.5

    def test_plan_is_deterministic(self):
        workload = lognormal_workload(50, seed=8)
        assert workload.single_stage_durations() == workload.single_stage_durations()
        assert workload.total_tokens() == workload.total_tokens()


def test_bench_report_shape():
    workload = lognormal_workload(100, seed=6)
    report = bench_report(
        workload, replicas=2, capacity=5, max_concurrency=20, batch_size=10, data_parallelism=2
    )
    assert set(report) == {"row", "batch", "tokens_per_second_ratio", "oracle"}
    assert report["oracle"]["row_delta_fraction"] < 0.05
    assert report["oracle"]["batch_delta_fraction"] < 0.05
    assert report["row"]["completed"] == 100
