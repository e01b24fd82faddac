"""Per-tool policy manifests: data model, JSON format, and the linter.

A manifest declares, for each tool, what it may execute (``exec``), an upper
bound on the budgets of values it produces (``pass``), and how to derive the
call-specific sink requirement from arguments (``sink_args``). Source
declarations map (tool, argument-prefix) origins to initial budgets.

File format (version 1), JSON:

    {
      "version": 1,
      "sources": [{"origin": "read_file:/data/hr/", "init": ["display:any:*"]}],
      "tools": [
        {"name": "send_http", "role": "sink",
         "exec": ["http_send:any:*"], "pass": ["display:any:*"],
         "sink_args": [{"op": "http_send", "arg_path": "url",
                        "scope_kind": "exact"}],
         "description": "POST a payload to a URL."}
      ]
    }

Budgets are written in the canonical privilege text form; ``["*"]`` is the
top budget.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Optional

from .algebra import (
    AlgebraError,
    Budget,
    SinkOp,
    SinkPrivilege,
    budget_meet,
    is_effectively_top,
    make_scope,
    normalize_path_prefix,
    normalize_url_prefix,
    parse_budget,
    parse_privilege,
    SCOPE_KINDS,
)
from .heuristics import match_read_keyword, match_sink_keyword

__all__ = [
    "ManifestError",
    "MalformedSinkCall",
    "UnknownTool",
    "SinkArgRule",
    "SourceDecl",
    "ToolDecl",
    "ManifestSet",
    "LintFinding",
    "parse_manifest",
    "serialize_manifest",
    "derive_req",
    "match_source",
    "lint",
    "load_manifest",
]

ROLES = ("source", "transform", "sink", "mixed")


class ManifestError(ValueError):
    """Schema or content violation in a manifest document."""


class MalformedSinkCall(Exception):
    """A sink call whose arguments cannot produce its declared requirement."""


class UnknownTool(Exception):
    """Tool not declared in the manifest."""


@dataclass(frozen=True)
class SinkArgRule:
    op: SinkOp
    arg_path: str
    scope_kind: str


@dataclass(frozen=True)
class SourceDecl:
    origin_id: str  # "<tool>:<pattern>", as written in the manifest
    tool: str
    pattern: str  # normalized; empty pattern matches any call of the tool
    init_budget: Budget
    declared_init: tuple[str, ...] = ()


@dataclass(frozen=True)
class ToolDecl:
    tool_name: str
    role: str
    exec_privs: frozenset[SinkPrivilege]
    pass_through: Budget
    sink_arg_rules: tuple[SinkArgRule, ...]
    description: str = ""
    declared_exec: tuple[str, ...] = ()
    declared_pass: tuple[str, ...] = ()


@dataclass(frozen=True)
class ManifestSet:
    sources: tuple[SourceDecl, ...]
    tools: tuple[ToolDecl, ...]
    manifest_version: int = 1

    def tool(self, name: str) -> Optional[ToolDecl]:
        for t in self.tools:
            if t.tool_name == name:
                return t
        return None


@dataclass(frozen=True)
class LintFinding:
    rule_id: str
    severity: str
    subject: str
    message: str


_RULE_SEVERITY = {
    "L1": "error",
    "L2": "error",
    "L3": "error",
    "L4": "warning",
    "L5": "warning",
    "L6": "warning",
}


def _normalize_pattern(tool: str, pattern: str) -> str:
    """Patterns that look like paths or URLs get the same normalization the
    matching arguments will get, so prefix checks stay byte-level."""
    if pattern.startswith("/"):
        return normalize_path_prefix(pattern)
    if "://" in pattern:
        return normalize_url_prefix(pattern)
    return pattern


def _parse_budget_field(items: Any, where: str) -> Budget:
    if not isinstance(items, list) or not all(isinstance(x, str) for x in items):
        raise ManifestError(f"{where}: budget must be a list of privilege strings")
    try:
        return parse_budget(items)
    except AlgebraError as e:
        raise ManifestError(f"{where}: {e}") from e


def parse_manifest(text: str) -> ManifestSet:
    """Parse and validate a manifest document; budgets are canonicalized."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ManifestError(f"not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ManifestError("top level must be an object")
    version = doc.get("version")
    if version != 1:
        raise ManifestError(f"unsupported manifest version: {version!r}")

    sources: list[SourceDecl] = []
    for i, s in enumerate(doc.get("sources", [])):
        where = f"sources[{i}]"
        if not isinstance(s, dict):
            raise ManifestError(f"{where}: must be an object")
        origin = s.get("origin")
        if not isinstance(origin, str) or not origin:
            raise ManifestError(f"{where}: origin must be a non-empty string")
        tool, _, pattern = origin.partition(":")
        if not tool:
            raise ManifestError(f"{where}: origin must start with a tool name")
        try:
            pattern = _normalize_pattern(tool, pattern)
        except AlgebraError as e:
            raise ManifestError(f"{where}: bad origin pattern: {e}") from e
        init = _parse_budget_field(s.get("init", []), f"{where}.init")
        sources.append(
            SourceDecl(
                origin_id=origin,
                tool=tool,
                pattern=pattern,
                init_budget=init,
                declared_init=tuple(s.get("init", [])),
            )
        )

    tools: list[ToolDecl] = []
    seen: set[str] = set()
    for i, t in enumerate(doc.get("tools", [])):
        where = f"tools[{i}]"
        if not isinstance(t, dict):
            raise ManifestError(f"{where}: must be an object")
        name = t.get("name")
        if not isinstance(name, str) or not name:
            raise ManifestError(f"{where}: name must be a non-empty string")
        if name in seen:
            raise ManifestError(f"{where}: duplicate tool_name {name!r}")
        seen.add(name)
        role = t.get("role")
        if role not in ROLES:
            raise ManifestError(f"{where}: role must be one of {ROLES}")

        declared_exec = t.get("exec", [])
        if not isinstance(declared_exec, list):
            raise ManifestError(f"{where}.exec: must be a list")
        try:
            exec_privs = frozenset(parse_privilege(p) for p in declared_exec)
        except AlgebraError as e:
            raise ManifestError(f"{where}.exec: {e}") from e

        pass_through = _parse_budget_field(t.get("pass", []), f"{where}.pass")

        rules: list[SinkArgRule] = []
        for j, r in enumerate(t.get("sink_args", [])):
            rwhere = f"{where}.sink_args[{j}]"
            if not isinstance(r, dict):
                raise ManifestError(f"{rwhere}: must be an object")
            try:
                op = SinkOp(str(r.get("op")))
            except AlgebraError as e:
                raise ManifestError(f"{rwhere}: {e}") from e
            arg_path = r.get("arg_path")
            if not isinstance(arg_path, str) or not arg_path:
                raise ManifestError(f"{rwhere}: arg_path must be a non-empty string")
            kind = r.get("scope_kind")
            if kind not in SCOPE_KINDS or kind == "any":
                raise ManifestError(
                    f"{rwhere}: scope_kind must be one of {[k for k in SCOPE_KINDS if k != 'any']}"
                )
            # The derived privilege must be constructible and coverable.
            if not any(e.op == op for e in exec_privs):
                raise ManifestError(
                    f"{rwhere}: op {op.name!r} has no covering exec privilege"
                )
            rules.append(SinkArgRule(op=op, arg_path=arg_path, scope_kind=kind))

        if role in ("sink", "mixed") and (not exec_privs or not rules):
            raise ManifestError(
                f"{where}: role {role!r} requires non-empty exec and sink_args"
            )

        tools.append(
            ToolDecl(
                tool_name=name,
                role=role,
                exec_privs=exec_privs,
                pass_through=pass_through,
                sink_arg_rules=tuple(rules),
                description=str(t.get("description", "")),
                declared_exec=tuple(declared_exec),
                declared_pass=tuple(t.get("pass", [])),
            )
        )

    return ManifestSet(sources=tuple(sources), tools=tuple(tools), manifest_version=1)


def serialize_manifest(m: ManifestSet) -> str:
    """Canonical JSON text; parse(serialize(m)) round-trips canonical sets."""
    doc = {
        "version": m.manifest_version,
        "sources": [
            {"origin": s.origin_id, "init": s.init_budget.serialize()}
            for s in m.sources
        ],
        "tools": [
            {
                "name": t.tool_name,
                "role": t.role,
                "exec": sorted(p.text() for p in t.exec_privs),
                "pass": t.pass_through.serialize(),
                "sink_args": [
                    {"op": r.op.name, "arg_path": r.arg_path, "scope_kind": r.scope_kind}
                    for r in t.sink_arg_rules
                ],
                "description": t.description,
            }
            for t in m.tools
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"


def load_manifest(path) -> ManifestSet:
    with open(path, "r", encoding="utf-8") as f:
        return parse_manifest(f.read())


def _arg_at_path(args: Any, dotted: str):
    cur = args
    for part in dotted.split("."):
        if not isinstance(cur, dict) or part not in cur:
            return None
        cur = cur[part]
    return cur


def _iter_strings(obj: Any):
    if isinstance(obj, str):
        yield obj
    elif isinstance(obj, dict):
        for v in obj.values():
            yield from _iter_strings(v)
    elif isinstance(obj, (list, tuple)):
        for v in obj:
            yield from _iter_strings(v)


def derive_req(m: ManifestSet, tool_name: str, args: dict) -> frozenset[SinkPrivilege]:
    """Derive the call-specific sink requirement from the invoked arguments.

    Returns the full privilege set (a call may require several, all of which
    must be authorized). Pure tools derive the empty set.
    """
    decl = m.tool(tool_name)
    if decl is None:
        raise UnknownTool(tool_name)
    req: set[SinkPrivilege] = set()
    for rule in decl.sink_arg_rules:
        raw = _arg_at_path(args, rule.arg_path)
        if not isinstance(raw, str) or not raw:
            raise MalformedSinkCall(
                f"{tool_name}: argument {rule.arg_path!r} missing or not a string"
            )
        if rule.scope_kind == "command_family":
            # The requirement names the command word actually invoked.
            raw = raw.split()[0] if raw.split() else raw
        try:
            scope = make_scope(rule.op, rule.scope_kind, raw)
        except AlgebraError as e:
            raise MalformedSinkCall(f"{tool_name}: {e}") from e
        req.add(SinkPrivilege(rule.op, scope))
    return frozenset(req)


def _match_candidates(args: dict, pattern: str) -> bool:
    if pattern == "":
        return True
    for s in _iter_strings(args):
        # Match on the normalized identity only: a traversal like
        # /data/public/../hr/x must classify as /data/hr/, never /data/public/.
        form = s
        try:
            if s.startswith("/"):
                form = normalize_path_prefix(s)
            elif "://" in s:
                form = normalize_url_prefix(s)
        except AlgebraError:
            form = s
        if form.startswith(pattern):
            return True
    return False


def match_source(m: ManifestSet, tool_name: str, args: dict) -> Optional[SourceDecl]:
    """Most specific SourceDecl matching (tool, args); longest pattern wins,
    declaration order breaks ties. None means the unknown-source default
    applies (bottom budget, fail closed)."""
    best: Optional[SourceDecl] = None
    for decl in m.sources:
        if decl.tool != tool_name:
            continue
        if _match_candidates(args, decl.pattern):
            if best is None or len(decl.pattern) > len(best.pattern):
                best = decl
    return best


def _budget_overlaps(b: Budget, priv: SinkPrivilege) -> bool:
    met = budget_meet(b, Budget.of([priv]))
    return met.is_top or bool(met.maximal)


def lint(m: ManifestSet) -> list[LintFinding]:
    """Run the six manifest rules. Deterministic and pure.

    L1 wildcard-scope, L2 missing-source-coverage, and L3 role/effect
    mismatch are errors; L4 unbounded-pass-through, L5 non-canonical-budget,
    and L6 dead-sink are warnings.
    """
    findings: list[LintFinding] = []

    def add(rule: str, subject: str, message: str) -> None:
        findings.append(LintFinding(rule, _RULE_SEVERITY[rule], subject, message))

    # L1: wildcard scopes on exfiltration-capable ops in Init or Pass.
    def _l1_budget(b: Budget, subject: str, which: str) -> None:
        if b.is_top:
            add("L1", subject, f"{which} budget is the top budget (wildcard scopes)")
            return
        for p in sorted(b.maximal, key=SinkPrivilege.sort_key):
            if p.op.is_exfil_capable and p.scope.kind == "any":
                add("L1", subject, f"{which} budget grants {p.op.name} at any scope")

    for s in m.sources:
        _l1_budget(s.init_budget, s.origin_id, "init")
    for t in m.tools:
        _l1_budget(t.pass_through, t.tool_name, "pass")

    # L2: source-shaped tools no SourceDecl can ever match.
    covered = {s.tool for s in m.sources}
    for t in m.tools:
        if t.role in ("sink", "mixed"):
            continue
        looks_source = t.role == "source" or match_read_keyword(t.tool_name)
        if looks_source and t.tool_name not in covered:
            add(
                "L2",
                t.tool_name,
                "no source declaration covers reads from this tool",
            )

    # L3: declared role disagrees with the sink keyword heuristic.
    for t in m.tools:
        if t.role in ("sink", "mixed"):
            continue
        kw = match_sink_keyword(t.tool_name, t.description)
        if kw:
            add(
                "L3",
                t.tool_name,
                f"role is {t.role!r} but name/description matches sink keyword {kw!r}",
            )

    # L4: a transform whose pass-through is effectively unbounded.
    for t in m.tools:
        if t.role == "transform" and is_effectively_top(t.pass_through):
            add("L4", t.tool_name, "pass-through budget is the top budget")

    # L5: declared budget text differs from its antichain reduction.
    def _l5(declared: tuple[str, ...], canon: Budget, subject: str, which: str) -> None:
        if list(declared) == ["*"]:
            return
        try:
            privs = [parse_privilege(x) for x in declared]
        except AlgebraError:
            return  # parse already rejected; unreachable on parsed sets
        if len(privs) != len(set(privs)) or set(privs) != set(canon.maximal):
            add("L5", subject, f"{which} budget is not in canonical antichain form")

    for s in m.sources:
        _l5(s.declared_init, s.init_budget, s.origin_id, "init")
    for t in m.tools:
        _l5(t.declared_pass, t.pass_through, t.tool_name, "pass")

    # L6: an exec privilege no init or pass budget overlaps; every call that
    # requires it would be denied.
    all_budgets = [s.init_budget for s in m.sources] + [
        t.pass_through for t in m.tools
    ]
    for t in m.tools:
        for e in sorted(t.exec_privs, key=SinkPrivilege.sort_key):
            if not any(_budget_overlaps(b, e) for b in all_budgets):
                add(
                    "L6",
                    t.tool_name,
                    f"exec privilege {e.text()} is unreachable from every "
                    "init and pass budget",
                )

    findings.sort(key=lambda f: (f.rule_id, f.subject, f.message))
    return findings
