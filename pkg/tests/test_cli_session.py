import json
from pathlib import Path

import pytest

from p2pflow.cli import main
from p2pflow.config import RunConfig, ServiceConfig
from p2pflow.errors import ConfigError
from p2pflow.services import LatencyModel
from p2pflow.session import build_session, read_input

CONFIG = """
workload: coral
seed: 99
clock: virtual
max_concurrency: 20
services:
  llm:
    kind: sim
    replicas: 2
    capacity: 10
    latency: {base_seconds: 0.01, seconds_per_output_token: 0.001, token_mu: 3.0}
workload_params: {turns_min: 2, turns_max: 4}
"""


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(CONFIG)
    return str(path)


@pytest.fixture
def input_path(tmp_path):
    path = tmp_path / "input.jsonl"
    with open(path, "w") as fh:
        for i in range(12):
            fh.write(json.dumps({"task_id": f"q{i}", "question": f"why {i}?"}) + "\n")
    return str(path)


class TestReadInput:
    def test_single_file_single_partition(self, input_path):
        partitions = read_input(input_path, 1)
        assert len(partitions) == 1
        assert len(partitions[0]) == 12
        assert partitions[0][0].task_id == "q0"

    def test_single_file_split_into_partitions(self, input_path):
        partitions = read_input(input_path, 4)
        assert len(partitions) == 4
        assert [len(p) for p in partitions] == [3, 3, 3, 3]

    def test_directory_one_partition_per_file(self, tmp_path):
        d = tmp_path / "data"
        d.mkdir()
        for f in range(3):
            with open(d / f"part{f}.jsonl", "w") as fh:
                for i in range(2):
                    fh.write(json.dumps({"question": f"{f}-{i}"}) + "\n")
        partitions = read_input(str(d), 99)
        assert len(partitions) == 3
        assert all(len(p) == 2 for p in partitions)
        # ids derived from filename and line number when absent
        assert partitions[0][0].task_id == "part0:0"

    def test_empty_dir(self, tmp_path):
        d = tmp_path / "empty"
        d.mkdir()
        assert read_input(str(d), 4) == []


class TestRunCommand:
    def test_end_to_end(self, config_path, input_path, tmp_path, capsys):
        out = str(tmp_path / "out.jsonl")
        code = main(["run", "--config", config_path, "--input", input_path, "--output", out])
        assert code == 0
        lines = Path(out).read_text().splitlines()
        assert len(lines) == 12
        task_ids = {json.loads(l)["task_id"] for l in lines}
        assert task_ids == {f"q{i}" for i in range(12)}
        summary = json.loads(Path(out + ".metrics.json").read_text())
        assert summary["counters"]["tasks_completed_total"] == 12
        printed = json.loads(capsys.readouterr().out)
        assert printed["counters"]["tasks_dispatched_total"] == 12

    def test_twin_runs_identical_line_sets_and_counters(self, config_path, input_path, tmp_path):
        outs = []
        counters = []
        for i in range(2):
            out = str(tmp_path / f"out{i}.jsonl")
            assert main(["run", "--config", config_path, "--input", input_path, "--output", out]) == 0
            outs.append(sorted(Path(out).read_text().splitlines()))
            counters.append(json.loads(Path(out + ".metrics.json").read_text())["counters"])
        assert outs[0] == outs[1]
        assert counters[0] == counters[1]

    def test_empty_input_dir_exits_zero(self, config_path, tmp_path, capsys):
        d = tmp_path / "nothing"
        d.mkdir()
        out = str(tmp_path / "out.jsonl")
        code = main(["run", "--config", config_path, "--input", str(d), "--output", out])
        assert code == 0
        assert Path(out).read_text() == ""
        summary = json.loads(capsys.readouterr().out)
        assert summary["counters"] == {}

    def test_overrides_apply(self, config_path, input_path, tmp_path):
        out = str(tmp_path / "out.jsonl")
        code = main(
            [
                "run",
                "--config",
                config_path,
                "--input",
                input_path,
                "--output",
                out,
                "budget.max_turns=1",
                "--allow-failures",
            ]
        )
        assert code == 0  # every task fails on budget but failures are allowed
        lines = [json.loads(l) for l in Path(out).read_text().splitlines()]
        assert all(l["reason"] == "budget" for l in lines)

    def test_failures_exit_nonzero(self, config_path, input_path, tmp_path):
        out = str(tmp_path / "out.jsonl")
        code = main(
            ["run", "--config", config_path, "--input", input_path, "--output", out,
             "budget.max_turns=1"]
        )
        assert code == 1


class TestValidateCommand:
    def test_ok(self, config_path, capsys):
        assert main(["validate", "--config", config_path]) == 0
        assert capsys.readouterr().out.strip() == "ok"

    def test_bad_config_exit_2(self, tmp_path, capsys):
        path = tmp_path / "bad.yaml"
        path.write_text("workload: coral\nclock: sundial\n")
        assert main(["validate", "--config", str(path)]) == 2
        assert "config error" in capsys.readouterr().err

    def test_unknown_role_named_in_error(self, config_path, input_path, tmp_path, capsys):
        code = main(
            ["run", "--config", config_path, "--input", input_path,
             "--output", str(tmp_path / "o.jsonl"),
             "roles.nonexistent_role.num_instances=2"]
        )
        assert code == 2
        assert "nonexistent_role" in capsys.readouterr().err


class TestBenchCommand:
    def test_report_shape(self, tmp_path, capsys):
        path = tmp_path / "bench.yaml"
        path.write_text(
            "workload: coral\n"
            "bench:\n"
            "  num_tasks: 200\n"
            "  replicas: 2\n"
            "  capacity: 5\n"
            "  max_concurrency: 20\n"
            "  batch_size: 10\n"
            "  data_parallelism: 2\n"
            "  latency: {token_mu: 4.0, token_sigma: 1.0}\n"
        )
        assert main(["bench", "--config", str(path)]) == 0
        report = json.loads(capsys.readouterr().out)
        assert {"row", "batch", "tokens_per_second_ratio", "oracle"} <= set(report)
        assert report["oracle"]["row_delta_fraction"] < 0.05


class TestSession:
    def test_orchestrator_order_override(self):
        config = RunConfig(
            workload="coral",
            services={"llm": ServiceConfig(name="llm", latency=LatencyModel(token_fixed=5))},
            orchestrator_order=["persona_b", "persona_a"],
            workload_params={"turns_min": 2, "turns_max": 2},
            max_concurrency=4,
        )
        session = build_session(config)
        dataset = session.plan.sample_dataset(3)
        session.run([dataset])
        lines = [json.loads(l) for l in session.output_lines]
        assert all(l["history"][0]["role"] == "persona_b" for l in lines)

    def test_order_with_unknown_role_rejected(self):
        config = RunConfig(
            workload="coral",
            services={"llm": ServiceConfig(name="llm")},
            orchestrator_order=["persona_a", "ghost"],
        )
        with pytest.raises(ConfigError, match="ghost"):
            build_session(config)

    def test_order_on_branching_workload_rejected(self):
        config = RunConfig(
            workload="natural_reasoning",
            services={"llm": ServiceConfig(name="llm")},
            orchestrator_order=["filter", "score"],
        )
        with pytest.raises(ConfigError, match="branching"):
            build_session(config)

    def test_missing_llm_service_rejected(self):
        with pytest.raises(ConfigError, match="services.llm"):
            build_session(RunConfig(workload="coral"))

    def test_missing_container_pool_rejected(self):
        config = RunConfig(workload="tau2_like", services={"llm": ServiceConfig(name="llm")})
        with pytest.raises(ConfigError, match="container_pool"):
            build_session(config)

    def test_role_instance_override_applied(self):
        config = RunConfig(
            workload="coral",
            services={"llm": ServiceConfig(name="llm")},
            roles={"persona_a": {"num_instances": 3}},
        )
        session = build_session(config)
        assert len(session.runtime.team.instances("persona_a")) == 3

    def test_per_partition_concurrency_caps_in_flight(self):
        config = RunConfig(
            workload="coral",
            services={"llm": ServiceConfig(name="llm", replicas=4, capacity=50,
                                           latency=LatencyModel(token_fixed=50))},
            max_concurrency=100,
            workload_params={"turns_min": 2, "turns_max": 2, "per_partition_concurrency": 2},
        )
        session = build_session(config)
        dataset = session.plan.sample_dataset(30)
        partitions = [dataset[0:10], dataset[10:20], dataset[20:30]]
        metrics = session.run(partitions)
        assert metrics.counter("tasks_completed_total") == 30
        # 3 partitions x 2 per-partition slots, global cap not binding
        assert metrics.gauge_peak("in_flight") == 6
