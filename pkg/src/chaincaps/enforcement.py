"""The decision engine: source initialization, budget propagation, sink
authorization, fail-closed handling of unknown tools, and ablation toggles.

Every tool call produces exactly one Decision, and denied calls are never
forwarded. Denials name the missing privilege but never echo tracked
content. Audit records are JSON lines with a monotonic sequence number and a
fixed field order, so two runs over the same inputs produce byte-identical
logs.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, replace
from typing import IO, Iterable, Optional

from .algebra import (
    Budget,
    Scope,
    SinkPrivilege,
    budget_contains,
    budget_meet,
    budget_union_maximal,
    privilege_leq,
)
from .declass import (
    ACCEPT,
    REJECT_BAD_MAC,
    DeclassToken,
    MalformedToken,
    NonceLedger,
    lineage_digest,
    verify_and_consume,
)
from .heuristics import match_sink_keyword
from .lineage import (
    DEFAULT_MAX_INDEX_BYTES,
    DEFAULT_MIN_FRAGMENT,
    SessionState,
    reset_session,
)
from .manifest import (
    MalformedSinkCall,
    ManifestSet,
    derive_req,
    match_source,
)

__all__ = [
    "EngineConfig",
    "ABLATION_TOGGLES",
    "Decision",
    "AuditLog",
    "Engine",
    "TREAT_AS_SINK",
    "TREAT_AS_PURE",
]

TREAT_AS_SINK = "treat_as_sink"
TREAT_AS_PURE = "treat_as_pure"

ABLATION_TOGGLES = (
    "disable_meet_rule",
    "collapse_scopes",
    "disable_context_budget",
    "disable_pass_through",
)


@dataclass(frozen=True)
class EngineConfig:
    disable_meet_rule: bool = False
    collapse_scopes: bool = False
    disable_context_budget: bool = False
    disable_pass_through: bool = False
    fail_closed_unknown: bool = True
    min_fragment_len: int = DEFAULT_MIN_FRAGMENT
    max_index_bytes: int = DEFAULT_MAX_INDEX_BYTES
    token_ttl: int = 300

    def with_ablation(self, toggle: str) -> "EngineConfig":
        if toggle not in ABLATION_TOGGLES:
            raise ValueError(f"unknown ablation toggle: {toggle!r}")
        return replace(self, **{toggle: True})


@dataclass(frozen=True)
class Decision:
    verdict: str  # allow | deny
    reason: str
    tool: str
    req: tuple[str, ...] = ()
    deps: tuple[int, ...] = ()
    effective_budget: tuple[str, ...] = ()
    missing: tuple[str, ...] = ()
    token_present: bool = False
    token_outcome: Optional[str] = None
    lineage_digest: str = ""
    detail: str = ""

    @property
    def allowed(self) -> bool:
        return self.verdict == "allow"


class AuditLog:
    """Append-only JSON-lines log; also kept in memory for comparison."""

    def __init__(self, stream: Optional[IO[str]] = None):
        self._stream = stream
        self.lines: list[str] = []

    def write(self, record: dict) -> None:
        line = json.dumps(record, separators=(",", ":")) + "\n"
        self.lines.append(line)
        if self._stream is not None:
            self._stream.write(line)
            self._stream.flush()

    def as_bytes(self) -> bytes:
        return "".join(self.lines).encode("utf-8")


def _coarsen_privilege(p: SinkPrivilege) -> SinkPrivilege:
    return SinkPrivilege(p.op, Scope.any())


def _coarsen_budget(b: Budget) -> Budget:
    if b.is_top:
        return b
    return Budget.of(_coarsen_privilege(p) for p in b.maximal)


class Engine:
    """Ties algebra, manifest, lineage, and declassification together.

    Stateless apart from the audit sequence and the nonce ledger; per-session
    state lives in SessionState objects owned by the caller.
    """

    def __init__(
        self,
        manifest: ManifestSet,
        config: Optional[EngineConfig] = None,
        key: Optional[bytes] = None,
        ledger: Optional[NonceLedger] = None,
        audit: Optional[AuditLog] = None,
    ):
        self.manifest = manifest
        self.config = config or EngineConfig()
        self.key = key
        self.ledger = ledger or NonceLedger()
        self.audit = audit
        self._seq = 0
        self._lock = threading.Lock()

    # -- sessions ------------------------------------------------------------

    def new_session(self, session_id: str) -> SessionState:
        return SessionState(
            session_id,
            min_fragment_len=self.config.min_fragment_len,
            max_index_bytes=self.config.max_index_bytes,
        )

    def reset(self, state: SessionState, session_id: Optional[str] = None) -> SessionState:
        return reset_session(state, session_id)

    # -- classification ------------------------------------------------------

    def classify_unknown(self, tool_name: str, description: str = "") -> str:
        """Fail-closed heuristic for tools absent from the manifest."""
        if match_sink_keyword(tool_name, description):
            return TREAT_AS_SINK
        return TREAT_AS_PURE

    # -- the sink rule ---------------------------------------------------------

    def on_tool_call(
        self,
        state: SessionState,
        tool_name: str,
        args: dict,
        token_wire: Optional[str] = None,
        description: str = "",
    ) -> Decision:
        cfg = self.config
        decl = self.manifest.tool(tool_name)
        token_present = token_wire is not None

        if decl is None:
            if (
                cfg.fail_closed_unknown
                and self.classify_unknown(tool_name, description) == TREAT_AS_SINK
            ):
                return self._finish(
                    state,
                    Decision(
                        verdict="deny",
                        reason="unknown_sink_fail_closed",
                        tool=tool_name,
                        token_present=token_present,
                        detail="tool not in manifest and name/description looks sink-like",
                    ),
                )
            deps = state.resolve_deps(args)
            return self._finish(
                state,
                Decision(
                    verdict="allow",
                    reason="authorized",
                    tool=tool_name,
                    deps=tuple(sorted(deps)),
                    effective_budget=tuple(self._effective(state, deps).serialize()),
                    token_present=token_present,
                ),
            )

        try:
            req = self._derive_req(tool_name, args)
        except MalformedSinkCall as e:
            return self._finish(
                state,
                Decision(
                    verdict="deny",
                    reason="malformed_sink_call",
                    tool=tool_name,
                    token_present=token_present,
                    detail=str(e),
                ),
            )

        deps = state.resolve_deps(args)
        b_agg = self._effective(state, deps)
        dep_ids = tuple(sorted(deps))
        req_text = tuple(sorted(p.text() for p in req))
        effective = tuple(b_agg.serialize())

        if not req:
            # Pure tools always forward; propagation happens on the result.
            return self._finish(
                state,
                Decision(
                    verdict="allow",
                    reason="authorized",
                    tool=tool_name,
                    deps=dep_ids,
                    effective_budget=effective,
                    token_present=token_present,
                ),
            )

        exec_privs = decl.exec_privs
        if cfg.collapse_scopes:
            exec_privs = frozenset(_coarsen_privilege(p) for p in exec_privs)
        uncovered = [
            r for r in req if not any(privilege_leq(r, e) for e in exec_privs)
        ]
        if uncovered:
            return self._finish(
                state,
                Decision(
                    verdict="deny",
                    reason="malformed_sink_call",
                    tool=tool_name,
                    req=req_text,
                    deps=dep_ids,
                    effective_budget=effective,
                    token_present=token_present,
                    detail="derived requirement outside the tool's declared exec set",
                ),
            )

        missing = tuple(
            sorted(p.text() for p in req if not budget_contains(b_agg, p))
        )
        digest = lineage_digest(state, deps)

        if not missing:
            return self._finish(
                state,
                Decision(
                    verdict="allow",
                    reason="authorized",
                    tool=tool_name,
                    req=req_text,
                    deps=dep_ids,
                    effective_budget=effective,
                    token_present=token_present,
                    lineage_digest=digest,
                ),
            )

        if token_present and self.key is not None:
            outcome = self._verify_token(token_wire, state.session_id, req, digest)
            if outcome == ACCEPT:
                return self._finish(
                    state,
                    Decision(
                        verdict="allow",
                        reason="declassified",
                        tool=tool_name,
                        req=req_text,
                        deps=dep_ids,
                        effective_budget=effective,
                        missing=missing,
                        token_present=True,
                        token_outcome=outcome,
                        lineage_digest=digest,
                    ),
                )
            return self._finish(
                state,
                Decision(
                    verdict="deny",
                    reason="missing_privilege",
                    tool=tool_name,
                    req=req_text,
                    deps=dep_ids,
                    effective_budget=effective,
                    missing=missing,
                    token_present=True,
                    token_outcome=outcome,
                    lineage_digest=digest,
                ),
            )

        return self._finish(
            state,
            Decision(
                verdict="deny",
                reason="missing_privilege",
                tool=tool_name,
                req=req_text,
                deps=dep_ids,
                effective_budget=effective,
                missing=missing,
                token_present=token_present,
                lineage_digest=digest,
            ),
        )

    # -- propagation -----------------------------------------------------------

    def on_tool_result(
        self, state: SessionState, tool_name: str, args: dict, content
    ) -> int:
        """Register the result of an allowed, forwarded call."""
        cfg = self.config
        data = content if isinstance(content, bytes) else str(content).encode("utf-8")
        decl = self.manifest.tool(tool_name)

        src = match_source(self.manifest, tool_name, args)
        if src is not None:
            return self._add_source(state, src.origin_id, src.init_budget, data)
        if decl is not None and decl.role == "source":
            # A read from an origin no declaration covers: fail closed.
            return self._add_source(
                state, f"{tool_name}:<unmatched>", Budget.BOTTOM, data
            )

        parents = state.resolve_deps(args)
        if decl is None:
            # Unknown pure tool: conservative pass bound, the context budget
            # at call time, so unmanifested transforms cannot widen budgets.
            pass_budget = state.ctx_budget
        elif cfg.disable_pass_through:
            pass_budget = Budget.TOP
        else:
            pass_budget = decl.pass_through
            if cfg.collapse_scopes:
                pass_budget = _coarsen_budget(pass_budget)

        if cfg.disable_meet_rule:
            if parents:
                base = Budget.BOTTOM
                for pid in parents:
                    base = budget_union_maximal(base, state.values[pid].budget)
            else:
                base = state.ctx_budget
        else:
            base = Budget.TOP
            for pid in parents:
                base = budget_meet(base, state.values[pid].budget)
            if not cfg.disable_context_budget:
                base = budget_meet(base, state.ctx_budget)

        budget = budget_meet(pass_budget, base)
        origins: set[str] = set()
        for pid in parents:
            origins |= state.values[pid].origins
        return state.add_value(
            content=data,
            budget=budget,
            origins=frozenset(origins),
            parents=frozenset(parents),
            narrow_ctx=self._narrow_ctx(),
        )

    def register_external_source(
        self, state: SessionState, origin_id: str, content
    ) -> int:
        """Source entry seen outside a tool call (replayed source_read
        events). The origin is matched against the manifest's declarations
        with the same longest-pattern rule used for tool results."""
        data = content if isinstance(content, bytes) else str(content).encode("utf-8")
        tool, _, argval = origin_id.partition(":")
        src = match_source(self.manifest, tool, {"origin": argval})
        if src is not None:
            return self._add_source(state, src.origin_id, src.init_budget, data)
        return self._add_source(state, origin_id, Budget.BOTTOM, data)

    # -- internals ---------------------------------------------------------------

    def _derive_req(self, tool_name: str, args: dict) -> frozenset[SinkPrivilege]:
        req = derive_req(self.manifest, tool_name, args)
        if self.config.collapse_scopes:
            req = frozenset(_coarsen_privilege(p) for p in req)
        return req

    def _add_source(
        self, state: SessionState, origin_id: str, init: Budget, data: bytes
    ) -> int:
        if self.config.collapse_scopes:
            init = _coarsen_budget(init)
        return state.add_value(
            content=data,
            budget=init,
            origins=frozenset({origin_id}),
            parents=frozenset(),
            is_source=True,
            narrow_ctx=self._narrow_ctx(),
        )

    def _narrow_ctx(self) -> bool:
        # With the meet rule ablated budgets pool by union, so the context
        # budget never narrows; with context tracking ablated it is ignored.
        return not (
            self.config.disable_meet_rule or self.config.disable_context_budget
        )

    def _effective(self, state: SessionState, deps: Iterable[int]) -> Budget:
        cfg = self.config
        deps = list(deps)
        if cfg.disable_meet_rule:
            if not deps:
                return state.ctx_budget
            agg = Budget.BOTTOM
            for vid in deps:
                agg = budget_union_maximal(agg, state.values[vid].budget)
            return agg
        if not deps:
            return Budget.TOP if cfg.disable_context_budget else state.ctx_budget
        agg = Budget.TOP
        for vid in deps:
            agg = budget_meet(agg, state.values[vid].budget)
        if not cfg.disable_context_budget:
            agg = budget_meet(agg, state.ctx_budget)
        return agg

    def _verify_token(
        self,
        token_wire: str,
        session_id: str,
        req: frozenset[SinkPrivilege],
        digest: str,
    ) -> str:
        try:
            token = DeclassToken.from_wire(token_wire)
        except MalformedToken:
            return REJECT_BAD_MAC
        return verify_and_consume(
            self.key, token, session_id, req, digest, self.ledger
        )

    def _finish(self, state: SessionState, decision: Decision) -> Decision:
        with self._lock:
            self._seq += 1
            seq = self._seq
            if self.audit is not None:
                self.audit.write(
                    {
                        "seq": seq,
                        "session_id": state.session_id,
                        "tool": decision.tool,
                        "req": list(decision.req),
                        "deps": list(decision.deps),
                        "effective_budget": list(decision.effective_budget),
                        "verdict": decision.verdict,
                        "reason": decision.reason,
                        "token": {
                            "present": decision.token_present,
                            "outcome": decision.token_outcome,
                        },
                        "lineage_digest": decision.lineage_digest,
                    }
                )
        return decision
