#!/usr/bin/env python3
"""End-to-end permission laundering, blocked at the proxy.

An agent reads a confidential salary file (display-only budget), fetches a
public news page (generous budget), summarizes the two together, and then
tries to POST the summary to a corporate endpoint. Every call is locally
authorized by the tools involved; the composition is not. The proxy blocks
the POST because the summary's budget is the meet of its inputs, while
displaying the same summary stays allowed.
"""

import json

from chaincaps.enforcement import AuditLog
from chaincaps.proxy import LoopbackUpstream, ToolProxy
from chaincaps.resources import bundled_manifest
from chaincaps.stubserver import StubToolServer

HR = "hr-salaries-2026-q3.csv: alice $182,000; bob $164,500 (confidential)"
NEWS = "news.example pay survey: median compensation up 4.1 percent this year"
SUMMARY = "benchmark memo: internal pay sits nine points over the sector median"

stub = StubToolServer()
stub.set_canned("read_file", {"path": "/data/hr/salaries.csv"}, HR)
stub.set_canned("fetch_url", {"url": "https://news.example/pay"}, NEWS)
stub.set_canned("summarize", {"text": HR + "\n" + NEWS}, SUMMARY)

audit = AuditLog()
proxy = ToolProxy(bundled_manifest("gold"), [LoopbackUpstream("fs", stub)], audit=audit)
session = proxy.open_session("demo")


def call(rid, name, arguments):
    resp = proxy.handle_request(session, {
        "jsonrpc": "2.0", "id": rid, "method": "tools/call",
        "params": {"name": name, "arguments": arguments},
    })
    if "error" in resp:
        err = resp["error"]
        print(f"  {name:<14} BLOCKED  {err['message']}")
    else:
        print(f"  {name:<14} allowed")
    return resp


print("=" * 70)
print("Four individually-authorized calls, one unsafe composition")
print("=" * 70)
call(1, "read_file", {"path": "/data/hr/salaries.csv"})
call(2, "fetch_url", {"url": "https://news.example/pay"})
call(3, "summarize", {"text": HR + "\n" + NEWS})
call(4, "send_http", {"url": "https://api.corp.example/v1/push", "payload": SUMMARY})
call(5, "display_user", {"channel": "user_console", "text": SUMMARY})

print()
print("stub saw these calls (denied ones never reach it):")
print(" ", stub.call_counts)

print()
print("audit log (decision per call, fixed schema):")
for line in audit.lines:
    rec = json.loads(line)
    print(f"  #{rec['seq']} {rec['tool']:<14} {rec['verdict']:<5} {rec['reason']}")
