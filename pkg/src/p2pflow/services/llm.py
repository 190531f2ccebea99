"""LLM generation services: a deterministic simulated backend and an HTTP
client for OpenAI-compatible chat-completions endpoints.

Both share the same replica-selection discipline: a request takes a capacity
slot on a live replica chosen uniformly at random among those with a free
slot, and otherwise waits FIFO for the first slot to free up anywhere. That
keeps every replica at or below its capacity while remaining load-balanced.
Failures trigger an immediate cache refresh and a reroute, up to the retry
limit.
"""

from __future__ import annotations

import asyncio
import os
import random
from collections import deque
from dataclasses import dataclass

import httpx

from ..clock import Clock
from ..errors import NoReplicas, ReplicaUnavailable
from ..metrics import MetricsRegistry
from ..model import derive_seed
from .registry import ReplicaRegistry, ServiceReplica

_WORDS = (
    "the quick brown fox jumps over lazy dog while data flows through "
    "agents and replies stream back with tokens of varied length"
).split()


def pseudo_text(seed: int, tokens: int) -> bytes:
    """Deterministic stand-in response of roughly one word per token."""
    rng = random.Random(derive_seed(seed, "content"))
    return " ".join(_WORDS[rng.randrange(len(_WORDS))] for _ in range(tokens)).encode("utf-8")


def pseudo_bytes(seed: int, size: int) -> bytes:
    """Deterministic printable-ASCII filler of exactly ``size`` bytes."""
    if size <= 0:
        return b""
    rng = random.Random(derive_seed(seed, "bytes"))
    words = []
    remaining = size
    while remaining > 0:
        word = _WORDS[rng.randrange(len(_WORDS))]
        words.append(word)
        remaining -= len(word) + 1
    return (" ".join(words))[:size].ljust(size, ".").encode("ascii")


@dataclass
class LatencyModel:
    """Service-time model: a base cost plus a per-output-token cost.

    Output token counts are lognormal, truncated to ``[1, token_max]``;
    ``token_fixed`` short-circuits sampling for homogeneous workloads.
    """

    base_seconds: float = 0.05
    seconds_per_output_token: float = 0.01
    token_mu: float = 4.0
    token_sigma: float = 0.6
    token_max: int = 4096
    token_fixed: int | None = None

    def sample_tokens(self, seed: int) -> int:
        if self.token_fixed is not None:
            return self.token_fixed
        rng = random.Random(derive_seed(seed, "tokens"))
        sampled = int(round(rng.lognormvariate(self.token_mu, self.token_sigma)))
        return max(1, min(self.token_max, sampled))

    def duration(self, tokens: int) -> float:
        return self.base_seconds + tokens * self.seconds_per_output_token


@dataclass
class GenerationRequest:
    prompt: bytes = b""
    max_tokens: int = 0  # 0 = no cap beyond the model's own
    temperature: float = 0.0
    seed: int = 0


@dataclass
class GenerationResponse:
    content: bytes
    output_token_count: int
    replica_id: str
    latency_seconds: float


class _ReplicaSlots:
    """Pooled capacity accounting across one service's replicas."""

    def __init__(self, service: str, registry: ReplicaRegistry, clock: Clock,
                 metrics: MetricsRegistry | None):
        self.service = service
        self.registry = registry
        self.clock = clock
        self.metrics = metrics
        self._waiters: deque[asyncio.Future] = deque()

    def _gauge(self, replica: ServiceReplica) -> None:
        if self.metrics is not None:
            self.metrics.set_gauge(
                f"replica_concurrency_{self.service}_{replica.replica_id}", replica.in_service
            )

    async def acquire(self, rng: random.Random) -> ServiceReplica:
        while True:
            live = [r for r in self.registry.list(self.service) if r.alive]
            if not live:
                live = [r for r in self.registry.refresh(self.service) if r.alive]
            if not live:
                raise NoReplicas(f"service {self.service} has no live replicas")
            free = [r for r in live if r.in_service < r.capacity]
            if free:
                replica = free[rng.randrange(len(free))]
                replica.in_service += 1
                self._gauge(replica)
                self.clock.bump()
                return replica
            fut: asyncio.Future = asyncio.get_running_loop().create_future()
            self._waiters.append(fut)
            await fut

    def release(self, replica: ServiceReplica) -> None:
        replica.in_service -= 1
        self._gauge(replica)
        self.clock.bump()
        self.wake_one()

    def wake_one(self) -> None:
        while self._waiters:
            fut = self._waiters.popleft()
            if not fut.done():
                fut.set_result(None)
                return

    def wake_all(self) -> None:
        while self._waiters:
            fut = self._waiters.popleft()
            if not fut.done():
                fut.set_result(None)


class SimLLMService:
    """Simulated inference backend.

    Holds a capacity slot for ``base + tokens x per_token`` seconds on the
    clock and returns deterministic pseudo-content, so identical seeds give
    identical responses in any scheduling order. A killed replica fails its
    in-flight requests immediately.
    """

    def __init__(
        self,
        name: str,
        registry: ReplicaRegistry,
        latency: LatencyModel,
        clock: Clock,
        metrics: MetricsRegistry | None = None,
        retry_limit: int = 3,
    ):
        self.name = name
        self.registry = registry
        self.latency = latency
        self.clock = clock
        self.metrics = metrics
        self.retry_limit = retry_limit
        self._slots = _ReplicaSlots(name, registry, clock, metrics)

    def _inc(self, counter: str, value: float = 1) -> None:
        if self.metrics is not None:
            self.metrics.inc(counter, value)

    async def generate(self, req: GenerationRequest) -> GenerationResponse:
        self._inc("service_requests_total")
        last_error: Exception | None = None
        for attempt in range(self.retry_limit):
            if attempt > 0:
                self._inc("service_retries_total")
                self.registry.refresh(self.name)
                self._slots.wake_all()
            try:
                return await self._attempt(req, attempt)
            except ReplicaUnavailable as exc:
                last_error = exc
            except NoReplicas as exc:
                last_error = exc
        self._inc("service_failures_total")
        raise last_error if last_error is not None else NoReplicas(self.name)

    async def _attempt(self, req: GenerationRequest, attempt: int) -> GenerationResponse:
        rng = random.Random(derive_seed(req.seed, "replica", attempt))
        replica = await self._slots.acquire(rng)
        try:
            if not replica.alive:
                raise ReplicaUnavailable(f"{self.name}/{replica.replica_id} is dead")
            tokens = self.latency.sample_tokens(req.seed)
            if req.max_tokens:
                tokens = min(tokens, req.max_tokens)
            started = self.clock.now()
            duration = self.latency.duration(tokens)
            await self._hold(replica, duration)
            content = pseudo_text(req.seed, tokens)
            self._inc("tokens_generated_total", tokens)
            self._inc("service_busy_seconds_total", duration)
            return GenerationResponse(
                content=content,
                output_token_count=tokens,
                replica_id=replica.replica_id,
                latency_seconds=self.clock.now() - started,
            )
        finally:
            self._slots.release(replica)

    async def _hold(self, replica: ServiceReplica, duration: float) -> None:
        """Occupy the slot for ``duration``; abort if the replica is killed."""
        sleeper = asyncio.ensure_future(self.clock.sleep(duration))
        death = replica.death_future()
        try:
            await asyncio.wait({sleeper, death}, return_when=asyncio.FIRST_COMPLETED)
        finally:
            replica.discard_death_waiter(death)
            if not death.done():
                death.cancel()
            if not sleeper.done():
                sleeper.cancel()
                try:
                    await sleeper
                except asyncio.CancelledError:
                    pass
        if death.done() and not death.cancelled():
            raise ReplicaUnavailable(f"{self.name}/{replica.replica_id} died mid-request")
        if sleeper.done() and not sleeper.cancelled():
            sleeper.result()


class HttpLLMService:
    """Client for OpenAI-compatible chat-completions endpoints.

    Replica endpoints come from the registry; auth token and a default
    endpoint may be supplied via ``P2PFLOW_LLM_URL`` / ``P2PFLOW_LLM_TOKEN``.
    Connection errors and 5xx/429 replies trigger refresh-and-reroute.
    """

    def __init__(
        self,
        name: str,
        registry: ReplicaRegistry,
        model: str,
        clock: Clock,
        metrics: MetricsRegistry | None = None,
        retry_limit: int = 3,
        api_key: str | None = None,
        timeout_seconds: float = 120.0,
        transport: httpx.AsyncBaseTransport | None = None,
    ):
        self.name = name
        self.registry = registry
        self.model = model
        self.clock = clock
        self.metrics = metrics
        self.retry_limit = retry_limit
        self.api_key = api_key if api_key is not None else os.environ.get("P2PFLOW_LLM_TOKEN")
        self._slots = _ReplicaSlots(name, registry, clock, metrics)
        self._client = httpx.AsyncClient(timeout=timeout_seconds, transport=transport)

    def _inc(self, counter: str, value: float = 1) -> None:
        if self.metrics is not None:
            self.metrics.inc(counter, value)

    async def generate(self, req: GenerationRequest) -> GenerationResponse:
        self._inc("service_requests_total")
        last_error: Exception | None = None
        for attempt in range(self.retry_limit):
            if attempt > 0:
                self._inc("service_retries_total")
                self.registry.refresh(self.name)
                self._slots.wake_all()
            try:
                return await self._attempt(req, attempt)
            except (ReplicaUnavailable, NoReplicas) as exc:
                last_error = exc
        self._inc("service_failures_total")
        raise last_error if last_error is not None else NoReplicas(self.name)

    async def _attempt(self, req: GenerationRequest, attempt: int) -> GenerationResponse:
        rng = random.Random(derive_seed(req.seed, "replica", attempt))
        replica = await self._slots.acquire(rng)
        started = self.clock.now()
        try:
            if not replica.alive:
                raise ReplicaUnavailable(f"{self.name}/{replica.replica_id} is dead")
            body: dict = {
                "model": self.model,
                "messages": [
                    {"role": "user", "content": req.prompt.decode("utf-8", errors="replace")}
                ],
            }
            if req.max_tokens:
                body["max_tokens"] = req.max_tokens
            if req.temperature:
                body["temperature"] = req.temperature
            headers = {}
            if self.api_key:
                headers["Authorization"] = f"Bearer {self.api_key}"
            try:
                response = await self._client.post(
                    replica.endpoint.rstrip("/") + "/chat/completions",
                    json=body,
                    headers=headers,
                )
            except httpx.HTTPError as exc:
                raise ReplicaUnavailable(f"{replica.endpoint}: {exc}") from exc
            if response.status_code in (429, 500, 502, 503, 504):
                raise ReplicaUnavailable(f"{replica.endpoint}: HTTP {response.status_code}")
            response.raise_for_status()
            payload = response.json()
            content = payload["choices"][0]["message"]["content"]
            usage = payload.get("usage", {})
            tokens = int(usage.get("completion_tokens") or max(1, len(content.split())))
            self._inc("tokens_generated_total", tokens)
            return GenerationResponse(
                content=content.encode("utf-8"),
                output_token_count=tokens,
                replica_id=replica.replica_id,
                latency_seconds=self.clock.now() - started,
            )
        finally:
            self._slots.release(replica)

    async def aclose(self) -> None:
        await self._client.aclose()
