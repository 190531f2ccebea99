"""Serializable data model shared by every part of the runtime.

Everything that travels between agents is built from these types. An
:class:`Orchestrator` is the per-task envelope: the input row, the
conversation history, the control state that decides which role acts next,
and the final outcome. All of it round-trips through a canonical JSON wire
format whose byte length is what the mailbox metrics account for.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from .errors import EncodingFailure

SINK_ROLE = "_sink"

SEQUENTIAL = "sequential"
BRANCHING = "branching"


class OutcomeStatus(str, Enum):
    SUCCESS = "success"
    FILTERED = "filtered"
    FAILED = "failed"


@dataclass
class TaskInput:
    """One dataset row; ``payload`` holds arbitrary JSON-like values."""

    task_id: str
    payload: dict[str, Any] = field(default_factory=dict)
    partition_id: int = 0


@dataclass
class InlineContent:
    """Content carried verbatim inside the message."""

    data: bytes

    @property
    def size_bytes(self) -> int:
        return len(self.data)


@dataclass
class OffloadedContent:
    """Content parked in the object store; only the reference travels."""

    object_id: str
    size_bytes: int


Content = InlineContent | OffloadedContent


@dataclass
class HistoryEntry:
    """One conversation turn.

    ``declared_size_bytes`` is the byte length of the materialized content
    and never changes when the content is offloaded.
    """

    author_role: str
    turn_index: int
    content: Content
    declared_size_bytes: int
    token_count: int = 0


@dataclass
class TaskOutcome:
    status: OutcomeStatus
    reason: str | None = None
    score: float | None = None
    tokens_generated: int = 0

    @classmethod
    def success(cls, score: float | None = None, tokens: int = 0) -> "TaskOutcome":
        return cls(OutcomeStatus.SUCCESS, score=score, tokens_generated=tokens)

    @classmethod
    def filtered(cls, reason: str, tokens: int = 0) -> "TaskOutcome":
        if not reason:
            raise ValueError("filtered outcome requires a non-empty reason")
        return cls(OutcomeStatus.FILTERED, reason=reason, tokens_generated=tokens)

    @classmethod
    def failed(cls, error: str, tokens: int = 0) -> "TaskOutcome":
        return cls(OutcomeStatus.FAILED, reason=error, tokens_generated=tokens)


@dataclass
class Budget:
    """Hard ceilings guaranteeing that cyclic flows terminate."""

    max_turns: int = 64
    max_total_tokens: int = 2**20


@dataclass
class ControlState:
    """Which role acts next, and whether the task is finished.

    ``hops`` counts sends so instance selection can be drawn from a
    per-orchestrator stream regardless of scheduling order.
    """

    kind: str = SEQUENTIAL
    order: list[str] = field(default_factory=list)
    index: int = 0
    is_done: bool = False
    next_role_override: str | None = None
    hops: int = 0


@dataclass
class Orchestrator:
    """Per-task envelope passed peer-to-peer among agents.

    Exactly one agent owns an orchestrator at any time, so plain mutation is
    safe; transfer happens by serializing into the target's mailbox.
    """

    task: TaskInput
    control: ControlState
    history: list[HistoryEntry] = field(default_factory=list)
    outcome: TaskOutcome | None = None
    rng_seed: int = 0
    budget: Budget = field(default_factory=Budget)

    @property
    def is_done(self) -> bool:
        return self.control.is_done

    def turns(self) -> int:
        return len(self.history)

    def tokens_total(self) -> int:
        return sum(e.token_count for e in self.history)


@dataclass(frozen=True)
class AgentId:
    role: str
    instance: int

    def __str__(self) -> str:
        return f"{self.role}/{self.instance}"


def derive_seed(*parts: object) -> int:
    """Stable 64-bit seed from a tuple of parts (ints, strings, bytes).

    Used for per-task seeds, per-hop routing draws, and per-request sampling
    so that results never depend on scheduling order.
    """
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        if isinstance(part, bytes):
            raw = part
        else:
            raw = str(part).encode("utf-8")
        h.update(len(raw).to_bytes(4, "big"))
        h.update(raw)
    return int.from_bytes(h.digest(), "big")


def _encode_bytes(data: bytes) -> dict[str, str]:
    try:
        return {"t": data.decode("utf-8")}
    except UnicodeDecodeError:
        return {"b": base64.b64encode(data).decode("ascii")}


def _decode_bytes(obj: dict[str, str]) -> bytes:
    if "t" in obj:
        return obj["t"].encode("utf-8")
    return base64.b64decode(obj["b"])


def content_to_dict(content: Content) -> dict[str, Any]:
    if isinstance(content, InlineContent):
        return {"kind": "inline", "data": _encode_bytes(content.data)}
    return {"kind": "ref", "id": content.object_id, "size": content.size_bytes}


def content_from_dict(obj: dict[str, Any]) -> Content:
    if obj["kind"] == "inline":
        return InlineContent(_decode_bytes(obj["data"]))
    return OffloadedContent(obj["id"], obj["size"])


def _entry_to_dict(entry: HistoryEntry) -> dict[str, Any]:
    return {
        "role": entry.author_role,
        "turn": entry.turn_index,
        "content": content_to_dict(entry.content),
        "size": entry.declared_size_bytes,
        "tokens": entry.token_count,
    }


def _entry_from_dict(obj: dict[str, Any]) -> HistoryEntry:
    return HistoryEntry(
        author_role=obj["role"],
        turn_index=obj["turn"],
        content=content_from_dict(obj["content"]),
        declared_size_bytes=obj["size"],
        token_count=obj["tokens"],
    )


def orchestrator_to_dict(orch: Orchestrator) -> dict[str, Any]:
    out: dict[str, Any] = {
        "task": {
            "id": orch.task.task_id,
            "payload": orch.task.payload,
            "partition": orch.task.partition_id,
        },
        "control": {
            "kind": orch.control.kind,
            "order": orch.control.order,
            "index": orch.control.index,
            "done": orch.control.is_done,
            "override": orch.control.next_role_override,
            "hops": orch.control.hops,
        },
        "history": [_entry_to_dict(e) for e in orch.history],
        "seed": orch.rng_seed,
        "budget": {
            "turns": orch.budget.max_turns,
            "tokens": orch.budget.max_total_tokens,
        },
    }
    if orch.outcome is not None:
        out["outcome"] = {
            "status": orch.outcome.status.value,
            "reason": orch.outcome.reason,
            "score": orch.outcome.score,
            "tokens": orch.outcome.tokens_generated,
        }
    return out


def orchestrator_from_dict(obj: dict[str, Any]) -> Orchestrator:
    outcome = None
    if "outcome" in obj:
        o = obj["outcome"]
        outcome = TaskOutcome(
            status=OutcomeStatus(o["status"]),
            reason=o["reason"],
            score=o["score"],
            tokens_generated=o["tokens"],
        )
    t = obj["task"]
    c = obj["control"]
    b = obj["budget"]
    return Orchestrator(
        task=TaskInput(task_id=t["id"], payload=t["payload"], partition_id=t["partition"]),
        control=ControlState(
            kind=c["kind"],
            order=list(c["order"]),
            index=c["index"],
            is_done=c["done"],
            next_role_override=c["override"],
            hops=c["hops"],
        ),
        history=[_entry_from_dict(e) for e in obj["history"]],
        outcome=outcome,
        rng_seed=obj["seed"],
        budget=Budget(max_turns=b["turns"], max_total_tokens=b["tokens"]),
    )


def canonical_json_bytes(obj: Any) -> bytes:
    """Deterministic UTF-8 JSON: sorted keys, no whitespace, no NaN."""
    try:
        return json.dumps(
            obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
        ).encode("utf-8")
    except (TypeError, ValueError) as exc:
        raise EncodingFailure(str(exc)) from exc


def serialize_orchestrator(orch: Orchestrator) -> bytes:
    return canonical_json_bytes(orchestrator_to_dict(orch))


def deserialize_orchestrator(raw: bytes) -> Orchestrator:
    return orchestrator_from_dict(json.loads(raw.decode("utf-8")))


def history_total_bytes(orch: Orchestrator) -> int:
    """Sum of declared content sizes, independent of inline/offloaded placement."""
    return sum(e.declared_size_bytes for e in orch.history)
