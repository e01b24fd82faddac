"""Transparent JSON-RPC 2.0 tool-call proxy.

The proxy sits between an agent client and one or more upstream tool
servers. It intercepts ``tools/list`` (to merge and namespace catalogs) and
``tools/call`` (to run the enforcement pipeline), offers a ``session/reset``
control method for task boundaries, and passes every other method through
untouched. Upstreams speak newline-delimited JSON-RPC over subprocess stdio;
the agent side is a TCP byte-stream listener speaking the same framing.

A denied call returns a protocol error and produces no upstream traffic.
"""

from __future__ import annotations

import json
import logging
import socket
import socketserver
import subprocess
import threading
import time
from dataclasses import dataclass
from typing import Any, Optional

from .declass import TOKEN_ARG
from .enforcement import AuditLog, Decision, Engine, EngineConfig
from .lineage import SessionState
from .manifest import ManifestSet

__all__ = [
    "UpstreamError",
    "StdioUpstream",
    "LoopbackUpstream",
    "ProxySession",
    "ToolProxy",
    "ProxyServer",
    "POLICY_DENIAL_CODE",
]

logger = logging.getLogger("chaincaps.proxy")

POLICY_DENIAL_CODE = -32060
UPSTREAM_ERROR_CODE = -32061
DEFAULT_TIMEOUT = 30.0


class UpstreamError(RuntimeError):
    pass


class StdioUpstream:
    """One proxied tool server run as a subprocess over stdio."""

    def __init__(self, name: str, command: list[str]):
        self.name = name
        self.command = command
        self._proc: Optional[subprocess.Popen] = None
        self._lock = threading.Lock()
        self._next_id = 1
        self._pending: dict[int, dict] = {}
        self._responses: dict[int, Any] = {}
        self._cond = threading.Condition()

    def start(self) -> None:
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            bufsize=1,
        )
        reader = threading.Thread(target=self._read_loop, daemon=True)
        reader.start()

    def _read_loop(self) -> None:
        assert self._proc is not None and self._proc.stdout is not None
        for line in self._proc.stdout:
            line = line.strip()
            if not line:
                continue
            try:
                msg = json.loads(line)
            except json.JSONDecodeError:
                continue
            rid = msg.get("id")
            if isinstance(rid, int):
                with self._cond:
                    self._responses[rid] = msg
                    self._cond.notify_all()

    def request(self, method: str, params: dict, timeout: float = DEFAULT_TIMEOUT) -> Any:
        """Send one request and wait for its response; returns the result or
        raises UpstreamError on error responses, timeouts, or a dead pipe."""
        if self._proc is None:
            self.start()
        assert self._proc is not None and self._proc.stdin is not None
        with self._lock:
            rid = self._next_id
            self._next_id += 1
        req = {"jsonrpc": "2.0", "id": rid, "method": method, "params": params}
        try:
            self._proc.stdin.write(json.dumps(req) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise UpstreamError(f"{self.name}: pipe closed") from e
        deadline = time.monotonic() + timeout
        with self._cond:
            while rid not in self._responses:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise UpstreamError(f"{self.name}: timeout waiting for {method}")
                if self._proc.poll() is not None:
                    raise UpstreamError(f"{self.name}: process exited")
                self._cond.wait(timeout=min(remaining, 0.2))
            msg = self._responses.pop(rid)
        if "error" in msg:
            raise UpstreamError(f"{self.name}: {msg['error'].get('message')}")
        return msg.get("result")

    def list_tools(self, timeout: float = DEFAULT_TIMEOUT) -> list[dict]:
        result = self.request("tools/list", {}, timeout=timeout)
        return list(result.get("tools", []))

    def call_tool(self, name: str, arguments: dict, timeout: float = DEFAULT_TIMEOUT) -> dict:
        return self.request(
            "tools/call", {"name": name, "arguments": arguments}, timeout=timeout
        )

    def close(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=3)
            except subprocess.TimeoutExpired:
                self._proc.kill()


class LoopbackUpstream:
    """In-process upstream around a handler object exposing
    ``handle(method, params)``. Records time spent inside the handler so the
    bench can subtract stub service time from pipeline time."""

    def __init__(self, name: str, handler):
        self.name = name
        self.handler = handler
        self.service_ns = 0
        self.calls = 0

    def request(self, method: str, params: dict, timeout: float = DEFAULT_TIMEOUT) -> Any:
        t0 = time.perf_counter_ns()
        try:
            return self.handler.handle(method, params)
        except ValueError as e:
            raise UpstreamError(f"{self.name}: {e}") from e
        finally:
            self.service_ns += time.perf_counter_ns() - t0
            self.calls += 1

    def list_tools(self, timeout: float = DEFAULT_TIMEOUT) -> list[dict]:
        return list(self.request("tools/list", {}).get("tools", []))

    def call_tool(self, name: str, arguments: dict, timeout: float = DEFAULT_TIMEOUT) -> dict:
        return self.request("tools/call", {"name": name, "arguments": arguments})

    def close(self) -> None:
        pass


@dataclass
class ProxySession:
    session_id: str
    state: SessionState


class ToolProxy:
    """Transport-independent proxy core: one instance serves any number of
    sessions; requests within a session are handled one at a time."""

    def __init__(
        self,
        manifest: ManifestSet,
        upstreams: list,
        config: Optional[EngineConfig] = None,
        key: Optional[bytes] = None,
        audit: Optional[AuditLog] = None,
        enforce: bool = True,
        call_timeout: float = DEFAULT_TIMEOUT,
    ):
        self.manifest = manifest
        self.upstreams = list(upstreams)
        self.engine = Engine(manifest, config=config, key=key, audit=audit)
        self.enforce = enforce
        self.call_timeout = call_timeout
        self._routes: Optional[dict[str, tuple[Any, str]]] = None
        self._catalog: Optional[list[dict]] = None
        self._session_count = 0
        self._lock = threading.Lock()

    # -- sessions -------------------------------------------------------------

    def open_session(self, session_id: Optional[str] = None) -> ProxySession:
        with self._lock:
            self._session_count += 1
            sid = session_id or f"conn{self._session_count}"
        return ProxySession(session_id=sid, state=self.engine.new_session(sid))

    # -- catalog ---------------------------------------------------------------

    def _ensure_catalog(self) -> None:
        if self._routes is not None:
            return
        listings: list[tuple[Any, list[dict]]] = []
        for up in self.upstreams:
            try:
                listings.append((up, up.list_tools()))
            except UpstreamError as e:
                logger.warning("upstream %s unreachable, tools omitted: %s", up.name, e)
        counts: dict[str, int] = {}
        for _, tools in listings:
            for t in tools:
                counts[t["name"]] = counts.get(t["name"], 0) + 1
        routes: dict[str, tuple[Any, str]] = {}
        catalog: list[dict] = []
        for up, tools in listings:
            for t in tools:
                name = t["name"]
                public = name if counts[name] == 1 else f"{up.name}.{name}"
                routes[public] = (up, name)
                entry = dict(t)
                entry["name"] = public
                decl = self.manifest.tool(name)
                # Without key material there is no declassification channel,
                # so nothing is added to the schemas (and pass-through stays
                # byte-identical).
                if (
                    self.engine.key is not None
                    and decl is not None
                    and decl.role in ("sink", "mixed")
                ):
                    schema = dict(entry.get("inputSchema", {"type": "object"}))
                    props = dict(schema.get("properties", {}))
                    props[TOKEN_ARG] = {
                        "type": "string",
                        "description": "one-shot declassification token "
                        "(consumed by the proxy, never forwarded)",
                    }
                    schema["properties"] = props
                    entry["inputSchema"] = schema
                catalog.append(entry)
        self._routes = routes
        self._catalog = catalog

    def handle_list_tools(self, session: ProxySession) -> dict:
        self._ensure_catalog()
        return {"ok": {"tools": list(self._catalog or [])}}

    # -- calls --------------------------------------------------------------------

    @staticmethod
    def _result_content(result: dict) -> bytes:
        texts = [
            c.get("text", "")
            for c in result.get("content", [])
            if isinstance(c, dict) and c.get("type") == "text"
        ]
        if texts:
            return "\n".join(texts).encode("utf-8")
        return json.dumps(result, sort_keys=True).encode("utf-8")

    def handle_tool_call(self, session: ProxySession, params: dict):
        name = params.get("name")
        if not isinstance(name, str):
            return _err(-32602, "tools/call requires a tool name")
        arguments = dict(params.get("arguments", {}))
        token = arguments.pop(TOKEN_ARG, None)

        self._ensure_catalog()
        route = (self._routes or {}).get(name)
        upstream_name = route[1] if route else name.split(".", 1)[-1]

        if self.enforce:
            decision = self.engine.on_tool_call(
                session.state, upstream_name, arguments, token_wire=token
            )
            if not decision.allowed:
                return _deny_error(decision)
        if route is None:
            return _err(-32602, f"unknown tool: {name}")
        upstream, real_name = route
        try:
            result = upstream.call_tool(real_name, arguments, timeout=self.call_timeout)
        except UpstreamError as e:
            # Upstream failure leaves session lineage untouched.
            return _err(UPSTREAM_ERROR_CODE, f"upstream error: {e}")
        if self.enforce:
            self.engine.on_tool_result(
                session.state, upstream_name, arguments, self._result_content(result)
            )
        return {"ok": result}

    def handle_session_control(self, session: ProxySession, params: dict):
        directive = params.get("directive", "reset")
        if directive != "reset":
            return _err(-32602, f"unknown session directive: {directive!r}")
        new_id = params.get("session_id")
        session.state = self.engine.reset(session.state, new_id)
        session.session_id = session.state.session_id
        return {"ok": {"reset": True, "session_id": session.session_id}}

    def handle_request(self, session: ProxySession, request: dict) -> Optional[dict]:
        """Process one JSON-RPC request object; returns the response object,
        or None for notifications."""
        rid = request.get("id")
        method = request.get("method")
        params = request.get("params", {}) or {}
        if not isinstance(method, str):
            return _wrap(rid, _err(-32600, "invalid request: no method"))

        if method == "tools/list":
            out = self.handle_list_tools(session)
        elif method == "tools/call":
            out = self.handle_tool_call(session, params)
        elif method == "session/reset":
            out = self.handle_session_control(session, params)
        else:
            out = self._passthrough(method, params)
        if rid is None:
            return None
        return _wrap(rid, out)

    def _passthrough(self, method: str, params: dict):
        target = None
        if len(self.upstreams) == 1:
            target = self.upstreams[0]
        elif "." in method:
            prefix, _, rest = method.partition(".")
            for up in self.upstreams:
                if up.name == prefix:
                    target = up
                    method = rest
                    break
        if target is None:
            return _err(-32601, f"method not routable: {method}")
        try:
            return {"ok": target.request(method, params, timeout=self.call_timeout)}
        except UpstreamError as e:
            return _err(UPSTREAM_ERROR_CODE, f"upstream error: {e}")

    def close(self) -> None:
        for up in self.upstreams:
            up.close()


def _err(code: int, message: str, data: Optional[dict] = None) -> dict:
    err = {"code": code, "message": message}
    if data is not None:
        err["data"] = data
    return {"error": err}


def _deny_error(decision: Decision) -> dict:
    # Never echo tracked content; privileges and digests only.
    if decision.reason == "missing_privilege":
        message = "policy denial: missing privilege " + ", ".join(decision.missing)
    else:
        message = f"policy denial: {decision.reason}"
    return _err(
        POLICY_DENIAL_CODE,
        message,
        data={
            "reason": decision.reason,
            "tool": decision.tool,
            "missing": list(decision.missing),
            "req": list(decision.req),
            "lineage_digest": decision.lineage_digest,
            "token": {
                "present": decision.token_present,
                "outcome": decision.token_outcome,
            },
        },
    )


def _wrap(rid, out: dict) -> dict:
    if "error" in out:
        return {"jsonrpc": "2.0", "id": rid, "error": out["error"]}
    return {"jsonrpc": "2.0", "id": rid, "result": out["ok"]}


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        proxy: ToolProxy = self.server.proxy  # type: ignore[attr-defined]
        session = proxy.open_session()
        for raw in self.rfile:
            line = raw.strip()
            if not line:
                continue
            try:
                request = json.loads(line)
            except json.JSONDecodeError:
                resp = {"jsonrpc": "2.0", "id": None,
                        "error": {"code": -32700, "message": "parse error"}}
                self._send(resp)
                continue
            resp = proxy.handle_request(session, request)
            if resp is not None:
                self._send(resp)

    def _send(self, obj: dict) -> None:
        try:
            self.wfile.write((json.dumps(obj) + "\n").encode("utf-8"))
            self.wfile.flush()
        except (BrokenPipeError, OSError):
            pass


class ProxyServer(socketserver.ThreadingTCPServer):
    """TCP listener: one agent connection is one proxy session."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: tuple[str, int], proxy: ToolProxy):
        super().__init__(address, _Handler)
        self.proxy = proxy

    @property
    def port(self) -> int:
        return self.server_address[1]

    def serve_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        self.proxy.close()


def connect_client(host: str, port: int, timeout: float = 10.0) -> "ProxyClient":
    return ProxyClient(host, port, timeout=timeout)


class ProxyClient:
    """Minimal line-framed JSON-RPC client used by tests and demos."""

    def __init__(self, host: str, port: int, timeout: float = 10.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self._file = self.sock.makefile("rwb")
        self._next_id = 1

    def request(self, method: str, params: Optional[dict] = None) -> dict:
        rid = self._next_id
        self._next_id += 1
        req = {"jsonrpc": "2.0", "id": rid, "method": method, "params": params or {}}
        self._file.write((json.dumps(req) + "\n").encode("utf-8"))
        self._file.flush()
        line = self._file.readline()
        if not line:
            raise ConnectionError("proxy closed the connection")
        return json.loads(line.decode("utf-8"))

    def close(self) -> None:
        try:
            self._file.close()
            self.sock.close()
        except OSError:
            pass
