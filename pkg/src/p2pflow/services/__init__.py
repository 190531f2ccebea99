"""Distributed-service layer: replica registry, LLM backends, containers."""

from __future__ import annotations

from typing import Union

from .containers import ContainerHandle, ContainerPool, apply_command, state_hash
from .llm import (
    GenerationRequest,
    GenerationResponse,
    HttpLLMService,
    LatencyModel,
    SimLLMService,
    pseudo_bytes,
    pseudo_text,
)
from .registry import (
    KILL,
    OPPORTUNISTIC,
    PERMANENT,
    REVIVE,
    ReplicaRegistry,
    ServiceReplica,
)

LLMService = Union[SimLLMService, HttpLLMService]


class ServiceHub:
    """Name -> service lookup handed to agent behaviors."""

    def __init__(self, registry: ReplicaRegistry | None = None):
        self.registry = registry or ReplicaRegistry()
        self._llm: dict[str, LLMService] = {}
        self._containers: dict[str, ContainerPool] = {}

    def add_llm(self, service: LLMService) -> None:
        self._llm[service.name] = service

    def add_container_pool(self, name: str, pool: ContainerPool) -> None:
        self._containers[name] = pool

    def llm(self, name: str) -> LLMService:
        return self._llm[name]

    def containers(self, name: str = "containers") -> ContainerPool:
        return self._containers[name]

    @property
    def llm_services(self) -> dict[str, LLMService]:
        return dict(self._llm)

    @property
    def container_pools(self) -> dict[str, ContainerPool]:
        return dict(self._containers)


__all__ = [
    "ContainerHandle",
    "ContainerPool",
    "GenerationRequest",
    "GenerationResponse",
    "HttpLLMService",
    "KILL",
    "LatencyModel",
    "LLMService",
    "OPPORTUNISTIC",
    "PERMANENT",
    "REVIVE",
    "ReplicaRegistry",
    "ServiceHub",
    "ServiceReplica",
    "SimLLMService",
    "apply_command",
    "pseudo_bytes",
    "pseudo_text",
    "state_hash",
]
