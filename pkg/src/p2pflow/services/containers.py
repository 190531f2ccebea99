"""Stateful container resource pool with an id registry.

Agents acquire containers by id so successive commands - and the final
reward replay - hit the same instance and see the same state. The simulated
environment is a deterministic key-value machine; commands execute one at a
time per container while distinct containers run concurrently.
"""

from __future__ import annotations

import asyncio
import hashlib
import itertools
from dataclasses import dataclass, field

from ..clock import Clock, WallClock
from ..errors import DeadContainer, PoolExhausted


@dataclass
class ContainerHandle:
    container_id: str
    owner_task: str
    instance_tag: int
    state: dict[str, str] = field(default_factory=dict)
    live: bool = True
    _lock: asyncio.Lock = field(default_factory=asyncio.Lock, repr=False)


def apply_command(state: dict[str, str], command: bytes) -> bytes:
    """Deterministic state transition shared by execution and replay checks."""
    parts = command.decode("utf-8", errors="replace").split(" ", 2)
    op = parts[0]
    if op == "reset":
        state.clear()
        return b"ok"
    if op == "set" and len(parts) == 3:
        state[parts[1]] = parts[2]
        return b"ok"
    if op == "get" and len(parts) >= 2:
        return state.get(parts[1], "").encode("utf-8")
    if op == "del" and len(parts) >= 2:
        state.pop(parts[1], None)
        return b"ok"
    if op == "hash":
        return state_hash(state).encode("ascii")
    return b"err:unknown-command"


def state_hash(state: dict[str, str]) -> str:
    h = hashlib.blake2b(digest_size=8)
    for key in sorted(state):
        h.update(key.encode("utf-8") + b"\x00" + state[key].encode("utf-8") + b"\x01")
    return h.hexdigest()


class ContainerPool:
    def __init__(self, capacity: int, clock: Clock | None = None):
        if capacity < 1:
            raise ValueError("container pool capacity must be >= 1")
        self.capacity = capacity
        self._clock = clock or WallClock()
        self._by_id: dict[str, ContainerHandle] = {}
        self._tags = itertools.count()

    def live_count(self) -> int:
        return len(self._by_id)

    def live_handle(self, container_id: str) -> ContainerHandle | None:
        return self._by_id.get(container_id)

    def acquire(self, container_id: str, owner_task: str) -> ContainerHandle:
        """Map the id to an instance; repeat acquires return the same one."""
        handle = self._by_id.get(container_id)
        if handle is not None:
            return handle
        if len(self._by_id) >= self.capacity:
            raise PoolExhausted(
                f"container pool at capacity {self.capacity}; id {container_id!r} is new"
            )
        handle = ContainerHandle(
            container_id=container_id, owner_task=owner_task, instance_tag=next(self._tags)
        )
        self._by_id[container_id] = handle
        self._clock.bump()
        return handle

    async def execute(self, handle: ContainerHandle, command: bytes) -> bytes:
        if not handle.live:
            raise DeadContainer(handle.container_id)
        async with handle._lock:
            if not handle.live:
                raise DeadContainer(handle.container_id)
            result = apply_command(handle.state, command)
        self._clock.bump()
        return result

    async def release(self, handle: ContainerHandle) -> None:
        """Unmap the id; idempotent. Waits out any in-flight command."""
        if not handle.live:
            return
        async with handle._lock:
            handle.live = False
        if self._by_id.get(handle.container_id) is handle:
            del self._by_id[handle.container_id]
        self._clock.bump()
