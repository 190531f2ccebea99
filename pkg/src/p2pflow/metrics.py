"""Run metrics: counters, gauges with traces, and exporters.

Counters are monotone; gauges record a timestamped trace so invariants like
"in-flight never exceeded the admission cap" can be asserted after a run.
The registry is written from the runtime's event loop and read by exporter
threads, so mutation and snapshotting are guarded by a lock.
"""

from __future__ import annotations

import http.server
import json
import logging
import re
import threading
from dataclasses import dataclass, field
from typing import Any

from .clock import Clock, WallClock

log = logging.getLogger(__name__)

_NAME_RE = re.compile(r"[^a-zA-Z0-9_:]")


@dataclass
class RunMetrics:
    """Point-in-time copy of the registry."""

    counters: dict[str, float] = field(default_factory=dict)
    gauges: dict[str, float] = field(default_factory=dict)
    gauge_peaks: dict[str, float] = field(default_factory=dict)
    at: float = 0.0

    def counter(self, name: str) -> float:
        return self.counters.get(name, 0)

    def gauge_peak(self, name: str) -> float:
        return self.gauge_peaks.get(name, 0)

    def to_dict(self) -> dict[str, Any]:
        return {
            "at": self.at,
            "counters": dict(self.counters),
            "gauges": dict(self.gauges),
            "gauge_peaks": dict(self.gauge_peaks),
        }


class MetricsRegistry:
    def __init__(self, clock: Clock | None = None, record_traces: bool = True):
        self._clock = clock or WallClock()
        self._lock = threading.Lock()
        self._counters: dict[str, float] = {}
        self._gauges: dict[str, float] = {}
        self._peaks: dict[str, float] = {}
        self._traces: dict[str, list[tuple[float, float]]] = {}
        self._record_traces = record_traces

    def inc(self, name: str, value: float = 1) -> None:
        if value < 0:
            raise ValueError(f"counter {name} decremented by {value}")
        with self._lock:
            self._counters[name] = self._counters.get(name, 0) + value

    def set_gauge(self, name: str, value: float) -> None:
        with self._lock:
            self._gauges[name] = value
            if value > self._peaks.get(name, float("-inf")):
                self._peaks[name] = value
            if self._record_traces:
                self._traces.setdefault(name, []).append((self._clock.now(), value))

    def counter(self, name: str) -> float:
        with self._lock:
            return self._counters.get(name, 0)

    def gauge(self, name: str) -> float:
        with self._lock:
            return self._gauges.get(name, 0)

    def gauge_trace(self, name: str) -> list[tuple[float, float]]:
        with self._lock:
            return list(self._traces.get(name, []))

    def snapshot(self) -> RunMetrics:
        with self._lock:
            return RunMetrics(
                counters=dict(self._counters),
                gauges=dict(self._gauges),
                gauge_peaks=dict(self._peaks),
                at=self._clock.now(),
            )


def prometheus_text(snapshot: RunMetrics) -> str:
    """Render a snapshot in the Prometheus text exposition format."""
    lines: list[str] = []
    for name in sorted(snapshot.counters):
        clean = _NAME_RE.sub("_", name)
        lines.append(f"# TYPE {clean} counter")
        lines.append(f"{clean} {_fmt(snapshot.counters[name])}")
    for name in sorted(snapshot.gauges):
        clean = _NAME_RE.sub("_", name)
        lines.append(f"# TYPE {clean} gauge")
        lines.append(f"{clean} {_fmt(snapshot.gauges[name])}")
    return "\n".join(lines) + "\n"


def _fmt(value: float) -> str:
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return repr(value) if isinstance(value, float) else str(value)


class MetricsHTTPServer:
    """Serves GET /metrics from a background thread; best-effort lifecycle."""

    def __init__(self, registry: MetricsRegistry, port: int):
        self.registry = registry
        self.port = port
        self._server: http.server.ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None

    def start(self) -> bool:
        registry = self.registry

        class Handler(http.server.BaseHTTPRequestHandler):
            def do_GET(self):  # noqa: N802 (http.server API)
                if self.path.rstrip("/") not in ("", "/metrics"):
                    self.send_error(404)
                    return
                body = prometheus_text(registry.snapshot()).encode("utf-8")
                self.send_response(200)
                self.send_header("Content-Type", "text/plain; version=0.0.4")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def log_message(self, *args):
                pass

        try:
            self._server = http.server.ThreadingHTTPServer(("127.0.0.1", self.port), Handler)
        except OSError as exc:
            log.warning("metrics endpoint disabled: cannot bind port %s (%s)", self.port, exc)
            return False
        self.port = self._server.server_address[1]
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return True

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None


class MetricsJsonlWriter:
    """Appends periodic registry samples to a JSONL file."""

    def __init__(self, registry: MetricsRegistry, path: str, interval_seconds: float = 1.0):
        self.registry = registry
        self.path = path
        self.interval = interval_seconds
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def start(self) -> None:
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()

    def _loop(self) -> None:
        while not self._stop.wait(self.interval):
            self._append()

    def _append(self) -> None:
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(self.registry.snapshot().to_dict()) + "\n")

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5)
        self._append()
