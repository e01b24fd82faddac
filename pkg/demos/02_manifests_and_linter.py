#!/usr/bin/env python3
"""Policy manifests and the six-rule linter.

Manifests declare, per tool, the initial budgets of sources, the privileges
sinks may exercise, pass-through bounds for produced values, and how to
derive each call's concrete requirement from its arguments. The linter
catches the authoring mistakes that dominate deployment quality.
"""

from chaincaps import derive_req, lint, match_source
from chaincaps.resources import bundled_manifest

gold = bundled_manifest("gold")
naive = bundled_manifest("naive")

print("=" * 70)
print("1. Requirements are derived from the actual call arguments")
print("=" * 70)
for tool, args in [
    ("send_http", {"url": "https://api.corp.example/v1/push", "payload": "..."}),
    ("write_file", {"path": "/workspace/reports/q3.md", "content": "..."}),
    ("run_shell", {"command": "grep -n TODO plan.md"}),
    ("summarize", {"text": "pure transform, no requirement"}),
]:
    req = derive_req(gold, tool, args)
    shown = ", ".join(sorted(p.text() for p in req)) or "(none - pure tool)"
    print(f"  {tool:<12} -> {shown}")

print()
print("=" * 70)
print("2. Sources match by longest declared pattern")
print("=" * 70)
for path in ("/data/hr/salaries.csv", "/data/public/faq.md", "/uncovered/x.txt"):
    decl = match_source(gold, "read_file", {"path": path})
    origin = decl.origin_id if decl else "(none -> bottom budget, fail closed)"
    print(f"  read_file {path:<28} -> {origin}")

print()
print("=" * 70)
print("3. Lint: expert manifest vs auto-generated one")
print("=" * 70)
print(f"  gold findings:  {len(lint(gold))}")
print(f"  naive findings: {len(lint(naive))}")
for f in lint(naive)[:8]:
    print(f"    {f.severity:<8} {f.rule_id} {f.subject}: {f.message}")
print("    ...")
print()
print("  Wildcard scopes (L1) and missing source coverage (L2) are exactly")
print("  the errors that crater the naive manifest's blocking rate in the")
print("  replay study (demo 05).")
