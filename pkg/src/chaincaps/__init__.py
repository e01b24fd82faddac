"""Sink-specific capability budgets for tool-using agents.

Values moving through a tool chain carry budgets (downward-closed sets of
sink privileges) that propagate by intersection: composition can narrow what
a value may still reach, never widen it. The package provides the budget
algebra, policy manifests with a linter, per-session lineage tracking,
signed one-shot declassification tokens, the enforcement engine, a
transparent JSON-RPC tool proxy, and a trace-replay harness with modeled
scalar-IFC and per-function-isolation baselines.
"""

__version__ = "0.1.0"

from .algebra import (
    Budget,
    Scope,
    SinkOp,
    SinkPrivilege,
    budget_contains,
    budget_meet,
    budget_subset,
    make_privilege,
    parse_budget,
    parse_privilege,
    privilege_leq,
)
from .declass import (
    DeclassToken,
    NonceLedger,
    lineage_digest,
    mint_token,
    verify_and_consume,
)
from .enforcement import AuditLog, Decision, Engine, EngineConfig
from .lineage import SessionState, TrackedValue, reset_session
from .manifest import (
    LintFinding,
    ManifestSet,
    derive_req,
    lint,
    load_manifest,
    match_source,
    parse_manifest,
    serialize_manifest,
)
from .proxy import ProxyServer, StdioUpstream, ToolProxy
from .replay import (
    Corpus,
    ManifestVariant,
    Trace,
    TraceEvent,
    load_corpus,
    replay_trace,
    run_suite,
)

__all__ = [
    "__version__",
    "Budget",
    "Scope",
    "SinkOp",
    "SinkPrivilege",
    "budget_contains",
    "budget_meet",
    "budget_subset",
    "make_privilege",
    "parse_budget",
    "parse_privilege",
    "privilege_leq",
    "DeclassToken",
    "NonceLedger",
    "lineage_digest",
    "mint_token",
    "verify_and_consume",
    "AuditLog",
    "Decision",
    "Engine",
    "EngineConfig",
    "SessionState",
    "TrackedValue",
    "reset_session",
    "LintFinding",
    "ManifestSet",
    "derive_req",
    "lint",
    "load_manifest",
    "match_source",
    "parse_manifest",
    "serialize_manifest",
    "ProxyServer",
    "StdioUpstream",
    "ToolProxy",
    "Corpus",
    "ManifestVariant",
    "Trace",
    "TraceEvent",
    "load_corpus",
    "replay_trace",
    "run_suite",
]
