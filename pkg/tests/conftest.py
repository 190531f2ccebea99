"""Shared test helpers: seeded model generators and asyncio runners."""

from __future__ import annotations

import asyncio
import random
import string
from typing import Any

from p2pflow import (
    Budget,
    ControlState,
    HistoryEntry,
    InlineContent,
    OffloadedContent,
    Orchestrator,
    OutcomeStatus,
    TaskInput,
    TaskOutcome,
)
from p2pflow.model import BRANCHING, SEQUENTIAL


def run(coro):
    return asyncio.run(coro)


def random_json_value(rng: random.Random, depth: int = 0) -> Any:
    choices = ["int", "float", "str", "bool", "none"]
    if depth < 2:
        choices += ["list", "dict"]
    kind = rng.choice(choices)
    if kind == "int":
        return rng.randint(-(10**9), 10**9)
    if kind == "float":
        return rng.uniform(-1e6, 1e6)
    if kind == "str":
        return "".join(rng.choices(string.printable, k=rng.randint(0, 12)))
    if kind == "bool":
        return rng.random() < 0.5
    if kind == "none":
        return None
    if kind == "list":
        return [random_json_value(rng, depth + 1) for _ in range(rng.randint(0, 3))]
    return {
        f"k{i}": random_json_value(rng, depth + 1) for i in range(rng.randint(0, 3))
    }


def random_content(rng: random.Random):
    if rng.random() < 0.3:
        return OffloadedContent(object_id=f"{rng.getrandbits(128):032x}", size_bytes=rng.randint(1, 9999))
    if rng.random() < 0.5:
        data = rng.randbytes(rng.randint(0, 64))  # arbitrary bytes, often non-utf8
    else:
        data = "".join(rng.choices(string.printable, k=rng.randint(0, 64))).encode()
    return InlineContent(data)


def random_orchestrator(rng: random.Random) -> Orchestrator:
    kind = rng.choice([SEQUENTIAL, BRANCHING])
    roles = [f"role{i}" for i in range(rng.randint(1, 4))]
    history = []
    for turn in range(rng.randint(0, 6)):
        content = random_content(rng)
        declared = (
            content.size_bytes
            if isinstance(content, OffloadedContent)
            else len(content.data)
        )
        history.append(
            HistoryEntry(
                author_role=rng.choice(roles),
                turn_index=turn,
                content=content,
                declared_size_bytes=declared,
                token_count=rng.randint(0, 500),
            )
        )
    outcome = None
    is_done = False
    if rng.random() < 0.3:
        is_done = True
        status = rng.choice(list(OutcomeStatus))
        outcome = TaskOutcome(
            status=status,
            reason="why" if status is not OutcomeStatus.SUCCESS else None,
            score=rng.random() if rng.random() < 0.5 else None,
            tokens_generated=rng.randint(0, 10000),
        )
    control = ControlState(
        kind=kind,
        order=roles if kind == SEQUENTIAL else [],
        index=rng.randrange(len(roles)) if kind == SEQUENTIAL else 0,
        is_done=is_done,
        next_role_override=rng.choice(roles) if kind == BRANCHING and not is_done else None,
        hops=rng.randint(0, 50),
    )
    return Orchestrator(
        task=TaskInput(
            task_id=f"t{rng.randint(0, 10**9)}",
            payload={"row": random_json_value(rng)},
            partition_id=rng.randint(0, 8),
        ),
        control=control,
        history=history,
        outcome=outcome,
        rng_seed=rng.getrandbits(64),
        budget=Budget(max_turns=rng.randint(1, 128), max_total_tokens=rng.randint(1, 2**20)),
    )
