#!/usr/bin/env python3
"""One-shot declassification tokens.

Sometimes a human really does want the blocked call to happen once. A token
signed with the proxy key authorizes exactly one sink call: it is bound to
the session, the precise requirement, and a digest of the contributing
lineage, and its nonce is consumed on acceptance. Replays, forgeries, and
rebinds all fail; no stored budget ever widens.
"""

from chaincaps.algebra import make_privilege
from chaincaps.declass import TOKEN_ARG, mint_token
from chaincaps.enforcement import AuditLog
from chaincaps.proxy import LoopbackUpstream, ToolProxy
from chaincaps.resources import bundled_manifest
from chaincaps.stubserver import StubToolServer

KEY = b"0123456789abcdef0123456789abcdef"
HR = "hr-salaries-2026-q3.csv: alice $182,000; bob $164,500 (confidential)"

stub = StubToolServer()
stub.set_canned("read_file", {"path": "/data/hr/salaries.csv"}, HR)
proxy = ToolProxy(bundled_manifest("gold"), [LoopbackUpstream("fs", stub)],
                  key=KEY, audit=AuditLog())
session = proxy.open_session("demo")


def call(rid, name, arguments):
    return proxy.handle_request(session, {
        "jsonrpc": "2.0", "id": rid, "method": "tools/call",
        "params": {"name": name, "arguments": arguments},
    })


print("=" * 70)
print("1. The denial carries what an operator needs to mint a token")
print("=" * 70)
call(1, "read_file", {"path": "/data/hr/salaries.csv"})
args = {"url": "https://api.corp.example/v1/push", "payload": HR}
denial = call(2, "send_http", args)["error"]["data"]
print(f"  reason:         {denial['reason']}")
print(f"  missing:        {denial['missing']}")
print(f"  lineage digest: {denial['lineage_digest'][:32]}...")

print()
print("=" * 70)
print("2. Mint against exactly that requirement and lineage")
print("=" * 70)
req = [make_privilege("http_send", "exact", "https://api.corp.example/v1/push")]
token = mint_token(KEY, "demo", req, denial["lineage_digest"], ttl_seconds=300)
print(f"  wire form: {token.wire()[:60]}...")

print()
print("=" * 70)
print("3. The token authorizes one call, then it is spent")
print("=" * 70)
first = call(3, "send_http", {**args, TOKEN_ARG: token.wire()})
print("  first presentation: ", "allowed" if "result" in first else "denied")
second = call(4, "send_http", {**args, TOKEN_ARG: token.wire()})
outcome = second["error"]["data"]["token"]["outcome"]
print(f"  second presentation: denied ({outcome})")

forged = token.wire()[:-4] + "AAAA"
third = call(5, "send_http", {**args, TOKEN_ARG: forged})
print(f"  forged mac:          denied ({third['error']['data']['token']['outcome']})")
