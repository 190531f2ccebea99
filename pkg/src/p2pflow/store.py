"""Shared immutable blob store for offloading large conversation contents.

Entries whose content exceeds the configured threshold are parked here and
only the object id travels inside orchestrator messages; the bytes are
fetched on demand and deleted when the owning task completes. Objects are
immutable: a put never overwrites, a get always returns the exact stored
bytes.

All access happens from tasks on one event loop; operations contain no await
points, so they are atomic with respect to each other.
"""

from __future__ import annotations

from dataclasses import dataclass

from .clock import Clock
from .errors import NotFound, StoreFull
from .model import Content, HistoryEntry, InlineContent, OffloadedContent


@dataclass
class StoreStats:
    live_objects: int = 0
    live_bytes: int = 0
    puts: int = 0
    gets: int = 0
    deletes: int = 0
    missing_deletes: int = 0


class ObjectStore:
    def __init__(self, byte_budget: int | None = None, clock: Clock | None = None):
        self._objects: dict[str, bytes] = {}
        self._counter = 0
        self._byte_budget = byte_budget
        self._clock = clock
        self.stats = StoreStats()

    def _bump(self) -> None:
        if self._clock is not None:
            self._clock.bump()

    def put(self, content: bytes) -> str:
        if len(content) == 0:
            raise ValueError("refusing to store empty content")
        if self._byte_budget is not None and self.stats.live_bytes + len(content) > self._byte_budget:
            raise StoreFull(
                f"store byte budget {self._byte_budget} exceeded "
                f"({self.stats.live_bytes} live + {len(content)} new)"
            )
        object_id = f"{self._counter:032x}"
        self._counter += 1
        self._objects[object_id] = content
        self.stats.puts += 1
        self.stats.live_objects += 1
        self.stats.live_bytes += len(content)
        self._bump()
        return object_id

    def get(self, object_id: str) -> bytes:
        try:
            content = self._objects[object_id]
        except KeyError:
            raise NotFound(f"object {object_id} is not live") from None
        self.stats.gets += 1
        self._bump()
        return content

    def delete(self, object_ids: list[str]) -> None:
        """Idempotent bulk delete; unknown ids are counted, not errors."""
        for object_id in object_ids:
            content = self._objects.pop(object_id, None)
            if content is None:
                self.stats.missing_deletes += 1
                continue
            self.stats.deletes += 1
            self.stats.live_objects -= 1
            self.stats.live_bytes -= len(content)
        self._bump()


def offload_history(
    entry: HistoryEntry, threshold_bytes: int | None, store: ObjectStore
) -> HistoryEntry:
    """Park the entry's content in the store when it exceeds the threshold.

    Strict inequality: content of exactly ``threshold_bytes`` stays inline.
    ``None`` disables offloading; 0 offloads every non-empty content. The
    declared size never changes - placement is invisible to consumers.
    """
    if threshold_bytes is None or not isinstance(entry.content, InlineContent):
        return entry
    data = entry.content.data
    if len(data) <= threshold_bytes:
        return entry
    object_id = store.put(data)
    entry.content = OffloadedContent(object_id=object_id, size_bytes=len(data))
    return entry


def resolve_content(content: Content, store: ObjectStore) -> bytes:
    if isinstance(content, InlineContent):
        return content.data
    return store.get(content.object_id)


def resolve_history(entries: list[HistoryEntry], store: ObjectStore) -> list[bytes]:
    """Materialize contents in order; offloaded ones are fetched from the store."""
    return [resolve_content(e.content, store) for e in entries]


def offloaded_ids(entries: list[HistoryEntry]) -> list[str]:
    return [e.content.object_id for e in entries if isinstance(e.content, OffloadedContent)]
