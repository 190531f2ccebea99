"""Replica registry with a client-side cache of live endpoints.

The registry holds the ground-truth replica set per service; callers read
through a cached live list that is refreshed when stale (by the configured
interval) or immediately after a request failure. Fault injection toggles
the ground truth, so a cached list may briefly keep advertising a dead
replica - that staleness is part of the contract.
"""

from __future__ import annotations

import asyncio
from dataclasses import dataclass, field

from ..clock import Clock, WallClock
from ..errors import UnknownReplica, UnknownService

PERMANENT = "permanent"
OPPORTUNISTIC = "opportunistic"

KILL = "kill"
REVIVE = "revive"


@dataclass
class ServiceReplica:
    replica_id: str
    endpoint: str = ""
    node_label: str = PERMANENT
    capacity: int = 1
    alive: bool = True
    # Runtime accounting; not part of the replica's identity.
    in_service: int = 0
    _death_waiters: list[asyncio.Future] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError(f"replica {self.replica_id}: capacity must be >= 1")

    def death_future(self) -> asyncio.Future:
        """Future resolved when this replica is killed; fires at once if dead."""
        fut: asyncio.Future = asyncio.get_running_loop().create_future()
        if not self.alive:
            fut.set_result(None)
        else:
            self._death_waiters.append(fut)
        return fut

    def discard_death_waiter(self, fut: asyncio.Future) -> None:
        try:
            self._death_waiters.remove(fut)
        except ValueError:
            pass


class ReplicaRegistry:
    def __init__(self, clock: Clock | None = None, refresh_interval: float = 5.0):
        self._clock = clock or WallClock()
        self.refresh_interval = refresh_interval
        self._truth: dict[str, dict[str, ServiceReplica]] = {}
        self._cache: dict[str, list[ServiceReplica]] = {}
        self._cache_at: dict[str, float] = {}

    def register(self, service: str, replica: ServiceReplica) -> None:
        self._truth.setdefault(service, {})[replica.replica_id] = replica

    def services(self) -> list[str]:
        return list(self._truth)

    def all_replicas(self, service: str) -> list[ServiceReplica]:
        if service not in self._truth:
            raise UnknownService(service)
        return list(self._truth[service].values())

    def list(self, service: str) -> list[ServiceReplica]:
        """Cached live replica set; refreshed lazily once it goes stale."""
        if service not in self._truth:
            raise UnknownService(service)
        age = self._clock.now() - self._cache_at.get(service, float("-inf"))
        if service not in self._cache or age > self.refresh_interval:
            return self.refresh(service)
        return self._cache[service]

    def refresh(self, service: str) -> list[ServiceReplica]:
        """Replace the cache with the currently-live set (may be empty)."""
        if service not in self._truth:
            raise UnknownService(service)
        live = [r for r in self._truth[service].values() if r.alive]
        self._cache[service] = live
        self._cache_at[service] = self._clock.now()
        self._clock.bump()
        return live

    def inject_fault(self, service: str, replica_id: str, mode: str) -> None:
        """Kill or revive one replica; kills fail its in-flight requests."""
        if service not in self._truth:
            raise UnknownService(service)
        replica = self._truth[service].get(replica_id)
        if replica is None:
            raise UnknownReplica(f"{service}/{replica_id}")
        if mode == KILL:
            replica.alive = False
            waiters, replica._death_waiters = replica._death_waiters, []
            for fut in waiters:
                if not fut.done():
                    fut.set_result(None)
        elif mode == REVIVE:
            replica.alive = True
        else:
            raise ValueError(f"unknown fault mode {mode!r}")
        self._clock.bump()
