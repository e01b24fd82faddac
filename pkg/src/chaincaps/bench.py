"""Latency bench: proxy-added time per tool call with loopback stubs.

Drives a benign read/transform/send workload through the full proxy
pipeline against an in-process stub upstream and reports the median and P95
of proxy-added time, which is pipeline time minus the time spent inside the
stub handler. A pass-through run (enforcement off) is reported separately as
the transport floor. Sessions reset periodically, matching task-scoped use.
"""

from __future__ import annotations

import statistics
import time
from typing import Optional

from .enforcement import AuditLog, EngineConfig
from .manifest import ManifestSet
from .proxy import LoopbackUpstream, ToolProxy
from .stubserver import StubToolServer

__all__ = ["run_bench"]

RESET_EVERY = 256


def _workload(i: int, payload: str) -> tuple[str, dict]:
    step = i % 4
    if step == 0:
        return "fetch_url", {"url": f"https://news.example/item/{i}"}
    if step == 1:
        return "summarize", {"text": f"digest {i}: {payload}"}
    if step == 2:
        return (
            "send_http",
            {"url": "https://api.corp.example/v1/digest", "payload": f"digest {i}: {payload}"},
        )
    return "display_user", {"channel": "user_console", "text": f"digest {i}"}


def run_bench(
    manifest: ManifestSet,
    calls: int = 10_000,
    payload_bytes: int = 256,
    enforce: bool = True,
    config: Optional[EngineConfig] = None,
) -> dict:
    """Run ``calls`` tool calls and return timing statistics in milliseconds."""
    stub = StubToolServer()
    upstream = LoopbackUpstream("bench", stub)
    proxy = ToolProxy(
        manifest,
        [upstream],
        config=config,
        audit=AuditLog() if enforce else None,
        enforce=enforce,
    )
    session = proxy.open_session("bench")
    payload = ("x" * max(0, payload_bytes - 16)) + "tail-marker-0123"

    added_ns: list[int] = []
    rid = 0
    for i in range(calls):
        if i and i % RESET_EVERY == 0:
            proxy.handle_session_control(session, {})
        tool, args = _workload(i, payload)
        rid += 1
        before_service = upstream.service_ns
        t0 = time.perf_counter_ns()
        resp = proxy.handle_request(
            session,
            {"jsonrpc": "2.0", "id": rid, "method": "tools/call",
             "params": {"name": tool, "arguments": args}},
        )
        total = time.perf_counter_ns() - t0
        service = upstream.service_ns - before_service
        added_ns.append(total - service)
        assert resp is not None and "error" not in resp, resp

    added_ms = sorted(ns / 1e6 for ns in added_ns)
    return {
        "calls": calls,
        "payload_bytes": payload_bytes,
        "enforcement": enforce,
        "median_ms": statistics.median(added_ms),
        "p95_ms": added_ms[int(0.95 * (len(added_ms) - 1))],
        "max_ms": added_ms[-1],
        "mean_ms": statistics.fmean(added_ms),
    }
