import json
import socket
import urllib.request

import pytest

from p2pflow import MetricsRegistry, VirtualClock, prometheus_text
from p2pflow.metrics import MetricsHTTPServer, MetricsJsonlWriter


def test_counters_accumulate():
    m = MetricsRegistry()
    m.inc("tasks_completed_total")
    m.inc("tasks_completed_total", 9)
    assert m.counter("tasks_completed_total") == 10
    assert m.counter("missing") == 0


def test_counters_are_monotone():
    m = MetricsRegistry()
    with pytest.raises(ValueError):
        m.inc("x", -1)


def test_gauge_trace_and_peak():
    clock = VirtualClock()
    m = MetricsRegistry(clock)
    for v in (1, 3, 2):
        m.set_gauge("in_flight", v)
    assert m.gauge("in_flight") == 2
    assert m.snapshot().gauge_peak("in_flight") == 3
    assert [v for _, v in m.gauge_trace("in_flight")] == [1, 3, 2]


def test_snapshot_is_a_copy():
    m = MetricsRegistry()
    m.inc("a")
    snap = m.snapshot()
    m.inc("a")
    assert snap.counter("a") == 1
    assert m.counter("a") == 2


def test_prometheus_text_format():
    m = MetricsRegistry()
    m.inc("tokens_generated_total", 42)
    m.set_gauge("in_flight", 7)
    text = prometheus_text(m.snapshot())
    assert "# TYPE tokens_generated_total counter\ntokens_generated_total 42\n" in text
    assert "# TYPE in_flight gauge\nin_flight 7" in text
    assert text.endswith("\n")


def test_prometheus_name_sanitization():
    m = MetricsRegistry()
    m.inc("tasks_filtered_filter_by-en_total")
    text = prometheus_text(m.snapshot())
    assert "filter_by_en" in text
    assert "-" not in text.splitlines()[1]


def test_http_endpoint_serves_metrics():
    m = MetricsRegistry()
    m.inc("tasks_completed_total", 5)
    server = MetricsHTTPServer(m, port=0)
    assert server.start()
    try:
        with urllib.request.urlopen(f"http://127.0.0.1:{server.port}/metrics") as resp:
            body = resp.read().decode()
        assert resp.status == 200
        assert "tasks_completed_total 5" in body
    finally:
        server.stop()


def test_http_endpoint_bind_failure_is_nonfatal():
    blocker = socket.socket()
    blocker.bind(("127.0.0.1", 0))
    blocker.listen(1)
    port = blocker.getsockname()[1]
    try:
        server = MetricsHTTPServer(MetricsRegistry(), port=port)
        assert server.start() is False
    finally:
        blocker.close()


def test_jsonl_writer_appends_samples(tmp_path):
    m = MetricsRegistry()
    m.inc("tasks_completed_total", 3)
    path = tmp_path / "metrics.jsonl"
    writer = MetricsJsonlWriter(m, str(path), interval_seconds=0.01)
    writer.start()
    import time

    time.sleep(0.05)
    writer.stop()
    lines = [json.loads(l) for l in path.read_text().splitlines()]
    assert len(lines) >= 1
    assert lines[-1]["counters"]["tasks_completed_total"] == 3


def test_rate_derivable_from_two_samples():
    clock = VirtualClock()
    m = MetricsRegistry(clock)
    m.inc("tokens_generated_total", 100)
    s1 = m.snapshot()
    clock._now = 10.0  # advance directly; no loop in this test
    m.inc("tokens_generated_total", 400)
    s2 = m.snapshot()
    rate = (s2.counter("tokens_generated_total") - s1.counter("tokens_generated_total")) / (
        s2.at - s1.at
    )
    assert rate == 40.0
