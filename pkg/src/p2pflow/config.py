"""Run configuration: YAML file plus dotted-path command-line overrides.

Everything is validated up front so a bad config fails before any agent
starts. The grammar is documented in the README; unknown keys are rejected
to catch typos early.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import yaml

from .errors import ConfigError
from .model import Budget
from .services.llm import LatencyModel

SIM_KIND = "sim"
HTTP_KIND = "http"
CONTAINER_KIND = "container_pool"

_TOP_LEVEL_KEYS = {
    "workload",
    "seed",
    "max_concurrency",
    "data_parallelism",
    "offload_threshold_bytes",
    "retry_limit",
    "clock",
    "budget",
    "mailbox_capacity",
    "roles",
    "orchestrator",
    "services",
    "workload_params",
    "refresh_interval_seconds",
    "metrics",
    "output",
    "allow_failures",
    "bench",
}


@dataclass
class ServiceConfig:
    name: str
    kind: str = SIM_KIND
    replicas: int = 1
    capacity: int = 1
    labels: list[str] = field(default_factory=list)
    latency: LatencyModel = field(default_factory=LatencyModel)
    model: str = ""
    endpoints: list[str] = field(default_factory=list)


@dataclass
class RunConfig:
    workload: str
    seed: int = 0
    max_concurrency: int = 64
    data_parallelism: int = 1
    offload_threshold_bytes: int | None = 512
    retry_limit: int = 3
    clock: str = "virtual"
    budget: Budget = field(default_factory=Budget)
    mailbox_capacity: int | None = None
    roles: dict[str, dict] = field(default_factory=dict)
    orchestrator_order: list[str] | None = None
    services: dict[str, ServiceConfig] = field(default_factory=dict)
    workload_params: dict = field(default_factory=dict)
    refresh_interval_seconds: float = 5.0
    metrics_port: int | None = None
    metrics_jsonl: str | None = None
    output: str | None = None
    allow_failures: bool = False
    bench_params: dict = field(default_factory=dict)


def _expect_int(raw: Any, path: str, minimum: int | None = None) -> int:
    if isinstance(raw, bool) or not isinstance(raw, int):
        raise ConfigError(path, f"expected integer, got {type(raw).__name__}")
    if minimum is not None and raw < minimum:
        raise ConfigError(path, f"must be >= {minimum}")
    return raw


def _expect_number(raw: Any, path: str, minimum: float | None = None) -> float:
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise ConfigError(path, f"expected number, got {type(raw).__name__}")
    if minimum is not None and raw < minimum:
        raise ConfigError(path, f"must be >= {minimum}")
    return float(raw)


def _expect_mapping(raw: Any, path: str) -> dict:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(path, f"expected mapping, got {type(raw).__name__}")
    return raw


def _parse_threshold(raw: Any, path: str) -> int | None:
    # Missing key means the 512-byte default; null or "inf" disables offloading.
    if raw is None or raw == "inf":
        return None
    return _expect_int(raw, path, minimum=0)


def parse_latency(raw: Any, path: str) -> LatencyModel:
    obj = _expect_mapping(raw, path)
    known = {
        "base_seconds",
        "seconds_per_output_token",
        "token_mu",
        "token_sigma",
        "token_max",
        "token_fixed",
    }
    unknown = set(obj) - known
    if unknown:
        raise ConfigError(path, f"unknown keys {sorted(unknown)}")
    latency = LatencyModel(
        base_seconds=_expect_number(obj.get("base_seconds", 0.05), f"{path}.base_seconds", 0.0),
        seconds_per_output_token=_expect_number(
            obj.get("seconds_per_output_token", 0.01), f"{path}.seconds_per_output_token"
        ),
        token_mu=_expect_number(obj.get("token_mu", 4.0), f"{path}.token_mu"),
        token_sigma=_expect_number(obj.get("token_sigma", 0.6), f"{path}.token_sigma", 0.0),
        token_max=_expect_int(obj.get("token_max", 4096), f"{path}.token_max", 1),
        token_fixed=(
            _expect_int(obj["token_fixed"], f"{path}.token_fixed", 1)
            if obj.get("token_fixed") is not None
            else None
        ),
    )
    if latency.seconds_per_output_token <= 0:
        raise ConfigError(f"{path}.seconds_per_output_token", "must be > 0")
    return latency


def _parse_service(name: str, raw: Any) -> ServiceConfig:
    path = f"services.{name}"
    obj = _expect_mapping(raw, path)
    kind = obj.get("kind", SIM_KIND)
    if kind not in (SIM_KIND, HTTP_KIND, CONTAINER_KIND):
        raise ConfigError(f"{path}.kind", f"unknown kind {kind!r}")
    labels = obj.get("labels", []) or []
    for index, label in enumerate(labels):
        if label not in ("permanent", "opportunistic"):
            raise ConfigError(f"{path}.labels[{index}]", f"unknown label {label!r}")
    return ServiceConfig(
        name=name,
        kind=kind,
        replicas=_expect_int(obj.get("replicas", 1), f"{path}.replicas", 1),
        capacity=_expect_int(obj.get("capacity", 1), f"{path}.capacity", 1),
        labels=list(labels),
        latency=parse_latency(obj.get("latency", {}), f"{path}.latency"),
        model=str(obj.get("model", "")),
        endpoints=list(obj.get("endpoints", []) or []),
    )


def parse_config(raw: Any) -> RunConfig:
    obj = _expect_mapping(raw, "config")
    unknown = set(obj) - _TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError("config", f"unknown keys {sorted(unknown)}")
    if "workload" not in obj:
        raise ConfigError("workload", "required")
    clock = obj.get("clock", "virtual")
    if clock not in ("virtual", "wall"):
        raise ConfigError("clock", f"must be 'virtual' or 'wall', got {clock!r}")

    budget_obj = _expect_mapping(obj.get("budget", {}), "budget")
    budget_unknown = set(budget_obj) - {"max_turns", "max_total_tokens"}
    if budget_unknown:
        raise ConfigError("budget", f"unknown keys {sorted(budget_unknown)}")
    budget = Budget(
        max_turns=_expect_int(budget_obj.get("max_turns", 64), "budget.max_turns", 1),
        max_total_tokens=_expect_int(
            budget_obj.get("max_total_tokens", 2**20), "budget.max_total_tokens", 1
        ),
    )

    roles = {}
    for role, role_obj in _expect_mapping(obj.get("roles", {}), "roles").items():
        role_obj = _expect_mapping(role_obj, f"roles.{role}")
        role_unknown = set(role_obj) - {"num_instances"}
        if role_unknown:
            raise ConfigError(f"roles.{role}", f"unknown keys {sorted(role_unknown)}")
        roles[role] = {
            "num_instances": _expect_int(
                role_obj.get("num_instances", 1), f"roles.{role}.num_instances", 1
            )
        }

    orchestrator_order = None
    orch_obj = _expect_mapping(obj.get("orchestrator", {}), "orchestrator")
    if orch_obj:
        orch_unknown = set(orch_obj) - {"order"}
        if orch_unknown:
            raise ConfigError("orchestrator", f"unknown keys {sorted(orch_unknown)}")
        order = orch_obj.get("order")
        if order is not None:
            if not isinstance(order, list) or not all(isinstance(r, str) for r in order):
                raise ConfigError("orchestrator.order", "expected a list of role names")
            orchestrator_order = list(order)

    services = {
        name: _parse_service(name, service_obj)
        for name, service_obj in _expect_mapping(obj.get("services", {}), "services").items()
    }

    metrics_obj = _expect_mapping(obj.get("metrics", {}), "metrics")
    metrics_unknown = set(metrics_obj) - {"port", "jsonl"}
    if metrics_unknown:
        raise ConfigError("metrics", f"unknown keys {sorted(metrics_unknown)}")

    return RunConfig(
        workload=str(obj["workload"]),
        seed=_expect_int(obj.get("seed", 0), "seed"),
        max_concurrency=_expect_int(obj.get("max_concurrency", 64), "max_concurrency", 1),
        data_parallelism=_expect_int(obj.get("data_parallelism", 1), "data_parallelism", 1),
        offload_threshold_bytes=_parse_threshold(
            obj.get("offload_threshold_bytes", 512), "offload_threshold_bytes"
        ),
        retry_limit=_expect_int(obj.get("retry_limit", 3), "retry_limit", 1),
        clock=clock,
        budget=budget,
        mailbox_capacity=(
            _expect_int(obj["mailbox_capacity"], "mailbox_capacity", 1)
            if obj.get("mailbox_capacity") is not None
            else None
        ),
        roles=roles,
        orchestrator_order=orchestrator_order,
        services=services,
        workload_params=_expect_mapping(obj.get("workload_params", {}), "workload_params"),
        refresh_interval_seconds=_expect_number(
            obj.get("refresh_interval_seconds", 5.0), "refresh_interval_seconds", 0.0
        ),
        metrics_port=(
            _expect_int(metrics_obj["port"], "metrics.port", 0)
            if metrics_obj.get("port") is not None
            else None
        ),
        metrics_jsonl=metrics_obj.get("jsonl"),
        output=obj.get("output"),
        allow_failures=bool(obj.get("allow_failures", False)),
        bench_params=_expect_mapping(obj.get("bench", {}), "bench"),
    )


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply ``dotted.path=value`` pairs on top of the parsed YAML mapping."""
    for override in overrides:
        if "=" not in override:
            raise ConfigError("overrides", f"expected key=value, got {override!r}")
        key, _, value = override.partition("=")
        parts = key.strip().split(".")
        target = raw
        for part in parts[:-1]:
            nxt = target.get(part)
            if nxt is None:
                nxt = target[part] = {}
            elif not isinstance(nxt, dict):
                raise ConfigError(key, f"cannot override inside scalar {part!r}")
            target = nxt
        target[parts[-1]] = yaml.safe_load(value)
    return raw


def load_config(path: str, overrides: list[str] | None = None) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be a mapping")
    apply_overrides(raw, list(overrides or []))
    return parse_config(raw)
