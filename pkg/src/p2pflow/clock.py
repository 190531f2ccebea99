"""Wall and virtual clocks.

Every latency in the runtime goes through a :class:`Clock` so that whole
workloads can execute in deterministic virtual time. The virtual clock is a
discrete-event scheduler layered on the asyncio loop: it advances to the
earliest pending deadline only once the loop has gone quiet, i.e. no task
made observable progress across several consecutive yields.

Progress is tracked with an activity counter that instrumented operations
(mailbox puts/gets, admission grants, service slot churn, store access) bump
via :meth:`Clock.bump`. Runtime code never busy-yields, so a short run of
quiet yields reliably means every task is blocked either on a virtual sleep
or on an event that only a virtual sleep can trigger.
"""

from __future__ import annotations

import asyncio
import heapq
import itertools
import time
from typing import Awaitable, TypeVar

from .errors import VirtualTimeDeadlock

T = TypeVar("T")

# Consecutive quiet yields required before virtual time may advance. Wake-up
# chains between instrumented operations are 2-3 callbacks long; this leaves
# a wide margin at negligible cost.
_QUIET_YIELDS = 12


class Clock:
    """Interface shared by :class:`WallClock` and :class:`VirtualClock`."""

    def now(self) -> float:
        raise NotImplementedError

    async def sleep(self, seconds: float) -> None:
        raise NotImplementedError

    def bump(self) -> None:
        """Record observable progress (no-op on the wall clock)."""

    async def run(self, coro: Awaitable[T]) -> T:
        """Execute ``coro`` to completion under this clock."""
        raise NotImplementedError


class WallClock(Clock):
    """Real time; ``now()`` is seconds since clock creation."""

    def __init__(self):
        self._t0 = time.monotonic()

    def now(self) -> float:
        return time.monotonic() - self._t0

    async def sleep(self, seconds: float) -> None:
        await asyncio.sleep(seconds)

    async def run(self, coro: Awaitable[T]) -> T:
        return await coro


class VirtualClock(Clock):
    """Deterministic discrete-event clock.

    ``sleep`` parks the caller on a heap of deadlines; :meth:`run` drives a
    foreground coroutine, advancing time whenever the loop quiesces. Two runs
    with identical inputs produce identical event orders: ties are broken by
    a monotone sequence number.
    """

    def __init__(self):
        self._now = 0.0
        self._heap: list[tuple[float, int, asyncio.Future]] = []
        self._seq = itertools.count()
        self._activity = 0

    def now(self) -> float:
        return self._now

    def bump(self) -> None:
        self._activity += 1

    async def sleep(self, seconds: float) -> None:
        if seconds <= 0:
            self.bump()
            await asyncio.sleep(0)
            return
        loop = asyncio.get_running_loop()
        fut: asyncio.Future = loop.create_future()
        heapq.heappush(self._heap, (self._now + seconds, next(self._seq), fut))
        self.bump()
        try:
            await fut
        finally:
            # On cancellation the heap entry goes stale; the advancer skips
            # cancelled futures when it pops them.
            self.bump()

    def _pop_due(self) -> list[asyncio.Future]:
        """Advance to the earliest live deadline and collect every waiter due."""
        due: list[asyncio.Future] = []
        while self._heap:
            deadline, _, fut = self._heap[0]
            if fut.cancelled():
                heapq.heappop(self._heap)
                continue
            if not due:
                self._now = max(self._now, deadline)
            if deadline <= self._now:
                heapq.heappop(self._heap)
                due.append(fut)
                continue
            break
        return due

    async def _settle(self) -> None:
        quiet = 0
        while quiet < _QUIET_YIELDS:
            before = self._activity
            await asyncio.sleep(0)
            quiet = 0 if self._activity != before else quiet + 1

    def _has_live_sleepers(self) -> bool:
        return any(not fut.cancelled() for _, _, fut in self._heap)

    async def run(self, coro: Awaitable[T]) -> T:
        main = asyncio.ensure_future(coro)
        try:
            while True:
                await self._settle()
                if main.done():
                    break
                due = self._pop_due()
                if not due:
                    if not self._has_live_sleepers():
                        main.cancel()
                        raise VirtualTimeDeadlock(
                            "no runnable task and no pending virtual sleeper"
                        )
                    continue
                for fut in due:
                    if not fut.done():
                        fut.set_result(None)
                    self.bump()
            return main.result()
        finally:
            if not main.done():
                main.cancel()
