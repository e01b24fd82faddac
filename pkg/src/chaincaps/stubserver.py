"""A small canned tool server used by tests, the latency bench, and demos.

Serves ``tools/list``, ``tools/call``, ``ping``, and two bookkeeping methods
(``stub/stats`` returns per-tool call counters, which is how tests assert
that denied calls never reach the upstream). Tool results are deterministic
functions of the arguments, optionally overridden by a canned
``(tool, args) -> text`` map so trace-driven tests can replay recorded
contents exactly.

Run as a stdio JSON-RPC subprocess with ``python -m chaincaps.stubserver``,
or embed in-process via :class:`StubToolServer`.
"""

from __future__ import annotations

import argparse
import json
import sys

DEFAULT_TOOLS = [
    {
        "name": "read_file",
        "description": "Read a local file and return its text.",
        "args": ["path"],
    },
    {
        "name": "fetch_url",
        "description": "Retrieve the contents of a web page.",
        "args": ["url"],
    },
    {
        "name": "summarize",
        "description": "Condense text into a short summary.",
        "args": ["text"],
    },
    {
        "name": "translate",
        "description": "Translate text between languages.",
        "args": ["text", "target_lang"],
    },
    {
        "name": "draft_reply",
        "description": "Draft a reply message from notes.",
        "args": ["notes"],
    },
    {
        "name": "render_page",
        "description": "Render raw page markup into readable text.",
        "args": ["markup"],
    },
    {
        "name": "display_user",
        "description": "Show text to the interactive user.",
        "args": ["channel", "text"],
    },
    {
        "name": "send_http",
        "description": "POST a payload to a URL.",
        "args": ["url", "payload"],
    },
    {
        "name": "send_email",
        "description": "Send a message to an email address.",
        "args": ["to", "body"],
    },
    {
        "name": "write_file",
        "description": "Write text to a local file path.",
        "args": ["path", "content"],
    },
    {
        "name": "run_shell",
        "description": "Run a shell command and capture output.",
        "args": ["command"],
    },
    {
        "name": "export_report",
        "description": "Export a document to an external destination.",
        "args": ["destination", "document"],
    },
]


def _canned_key(tool: str, args: dict) -> str:
    return tool + "\x1f" + json.dumps(args, sort_keys=True, separators=(",", ":"))


class StubToolServer:
    """Deterministic in-process tool server."""

    def __init__(self, tools=None, canned: dict | None = None):
        self.tools = tools if tools is not None else DEFAULT_TOOLS
        self.canned = dict(canned or {})
        self.call_counts: dict[str, int] = {}

    def set_canned(self, tool: str, args: dict, text: str) -> None:
        self.canned[_canned_key(tool, args)] = text

    def _result_text(self, tool: str, args: dict) -> str:
        key = _canned_key(tool, args)
        if key in self.canned:
            return self.canned[key]
        if tool == "read_file":
            return f"contents of {args.get('path', '?')}: lorem ipsum placeholder body"
        if tool == "fetch_url":
            return f"page at {args.get('url', '?')}: placeholder remote document body"
        if tool in ("summarize", "translate", "draft_reply", "render_page"):
            src = args.get("text") or args.get("notes") or args.get("markup") or ""
            return f"{tool} output: {src[:160]}"
        if tool == "display_user":
            return "displayed"
        if tool == "send_http":
            return f"202 accepted by {args.get('url', '?')}"
        if tool == "send_email":
            return f"queued for {args.get('to', '?')}"
        if tool == "write_file":
            return f"wrote {args.get('path', '?')}"
        if tool == "run_shell":
            return "exit 0"
        if tool == "export_report":
            return f"exported to {args.get('destination', '?')}"
        return "ok"

    def handle(self, method: str, params: dict) -> dict:
        """Return a result object, or raise ValueError for bad requests."""
        if method == "tools/list":
            return {
                "tools": [
                    {
                        "name": t["name"],
                        "description": t["description"],
                        "inputSchema": {
                            "type": "object",
                            "properties": {a: {"type": "string"} for a in t["args"]},
                        },
                    }
                    for t in self.tools
                ]
            }
        if method == "tools/call":
            name = params.get("name")
            if not any(t["name"] == name for t in self.tools):
                raise ValueError(f"unknown tool: {name}")
            args = params.get("arguments", {})
            self.call_counts[name] = self.call_counts.get(name, 0) + 1
            return {
                "content": [{"type": "text", "text": self._result_text(name, args)}],
                "isError": False,
            }
        if method == "ping":
            return {"pong": True}
        if method == "stub/stats":
            return {"call_counts": dict(self.call_counts)}
        if method == "stub/reset_stats":
            self.call_counts = {}
            return {"ok": True}
        raise ValueError(f"method not supported: {method}")


def serve_stdio(server: StubToolServer, stdin=None, stdout=None) -> None:
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            req = json.loads(line)
        except json.JSONDecodeError:
            continue
        rid = req.get("id")
        try:
            result = server.handle(req.get("method", ""), req.get("params", {}))
            resp = {"jsonrpc": "2.0", "id": rid, "result": result}
        except ValueError as e:
            resp = {
                "jsonrpc": "2.0",
                "id": rid,
                "error": {"code": -32601, "message": str(e)},
            }
        stdout.write(json.dumps(resp) + "\n")
        stdout.flush()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="canned JSON-RPC tool server")
    parser.add_argument(
        "--canned", help="JSON file of canned results: [{tool, args, text}]"
    )
    opts = parser.parse_args(argv)
    canned = {}
    if opts.canned:
        with open(opts.canned, "r", encoding="utf-8") as f:
            for entry in json.load(f):
                canned[_canned_key(entry["tool"], entry["args"])] = entry["text"]
    serve_stdio(StubToolServer(canned=canned))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
