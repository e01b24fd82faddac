"""Trace replay: the event format, the replay executor, modeled baseline
defenses, and suite-level metrics.

A trace is a JSONL file of events (source reads, tool calls, tool results,
session resets, token presentations) recorded from an undefended agent run.
Replaying feeds the events through a chosen decision pipeline; an attack
trace counts as blocked when some attack-step call is denied, and a benign
trace completes when nothing is denied. The two baselines instantiate policy
abstractions, not full systems: ``scalar_ifc`` propagates one totally
ordered sensitivity label per value by max and checks sink clearances;
``pfi_model`` denies only direct single-hop flows from a restricted source
into a sink.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .algebra import Budget
from .enforcement import AuditLog, Engine, EngineConfig
from .lineage import SessionState
from .manifest import (
    MalformedSinkCall,
    ManifestSet,
    UnknownTool,
    derive_req,
    match_source,
)

__all__ = [
    "TraceError",
    "TraceEvent",
    "Trace",
    "TraceVerdict",
    "ManifestVariant",
    "Corpus",
    "DEFENSES",
    "load_trace_events",
    "load_corpus",
    "replay_trace",
    "run_suite",
    "ReplayReport",
    "ScalarIfcModel",
    "PfiModel",
]

DEFENSES = ("chaincaps", "scalar_ifc", "pfi_model")

EVENT_KINDS = (
    "session_reset",
    "source_read",
    "tool_call",
    "tool_result",
    "declass_present",
)


class TraceError(ValueError):
    """Malformed trace file or event."""


@dataclass(frozen=True)
class TraceEvent:
    seq: int
    kind: str
    origin_id: str = ""
    content: str = ""
    tool: str = ""
    args: dict = field(default_factory=dict)
    is_attack_step: bool = False
    token: str = ""

    @classmethod
    def from_json(cls, line: str) -> "TraceEvent":
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise TraceError(f"bad event line: {e}") from e
        kind = obj.get("kind")
        if kind not in EVENT_KINDS:
            raise TraceError(f"unknown event kind: {kind!r}")
        seq = obj.get("seq")
        if not isinstance(seq, int):
            raise TraceError("event seq must be an integer")
        return cls(
            seq=seq,
            kind=kind,
            origin_id=obj.get("origin_id", ""),
            content=obj.get("content", ""),
            tool=obj.get("tool", ""),
            args=obj.get("args", {}),
            is_attack_step=bool(obj.get("is_attack_step", False)),
            token=obj.get("token", ""),
        )

    def to_json(self) -> str:
        obj: dict = {"seq": self.seq, "kind": self.kind}
        if self.kind == "source_read":
            obj["origin_id"] = self.origin_id
            obj["content"] = self.content
        elif self.kind == "tool_call":
            obj["tool"] = self.tool
            obj["args"] = self.args
            if self.is_attack_step:
                obj["is_attack_step"] = True
        elif self.kind == "tool_result":
            obj["content"] = self.content
        elif self.kind == "declass_present":
            obj["token"] = self.token
        return json.dumps(obj, separators=(",", ":"), sort_keys=False)


@dataclass(frozen=True)
class Trace:
    trace_id: str
    label: str  # attack | benign
    category: str
    events: tuple[TraceEvent, ...]
    expected: dict = field(default_factory=dict)
    tags: dict = field(default_factory=dict)

    def validate(self) -> None:
        last = 0
        prev_kind = ""
        for ev in self.events:
            if ev.seq <= last:
                raise TraceError(f"{self.trace_id}: events not strictly ordered")
            if ev.kind == "tool_result" and prev_kind != "tool_call":
                raise TraceError(
                    f"{self.trace_id}: tool_result not preceded by tool_call"
                )
            last = ev.seq
            prev_kind = ev.kind
        if self.label == "attack" and not any(
            ev.is_attack_step for ev in self.events
        ):
            raise TraceError(f"{self.trace_id}: attack trace has no attack step")
        if self.label not in ("attack", "benign"):
            raise TraceError(f"{self.trace_id}: label must be attack or benign")


@dataclass(frozen=True)
class TraceVerdict:
    trace_id: str
    label: str
    category: str
    blocked: bool
    blocked_at: Optional[int]
    completed: bool
    denied_seqs: tuple[int, ...]
    error: str = ""


@dataclass(frozen=True)
class ManifestVariant:
    name: str
    manifest: ManifestSet
    source_labels: dict
    sink_clearances: dict
    default_label: int = 2


@dataclass
class Corpus:
    traces: list[Trace]
    thresholds: list[dict]

    @property
    def attacks(self) -> list[Trace]:
        return [t for t in self.traces if t.label == "attack"]

    @property
    def benign(self) -> list[Trace]:
        return [t for t in self.traces if t.label == "benign"]


def load_trace_events(path) -> tuple[TraceEvent, ...]:
    events = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                events.append(TraceEvent.from_json(line))
    return tuple(events)


def load_corpus(index_path) -> Corpus:
    index_path = Path(index_path)
    with open(index_path, "r", encoding="utf-8") as f:
        index = json.load(f)
    traces = []
    for entry in index.get("traces", []):
        trace = Trace(
            trace_id=entry["trace_id"],
            label=entry["label"],
            category=entry.get("category", ""),
            events=load_trace_events(index_path.parent / entry["path"]),
            expected=entry.get("expected", {}),
            tags=entry.get("tags", {}),
        )
        trace.validate()
        traces.append(trace)
    return Corpus(traces=traces, thresholds=index.get("thresholds", []))


# -- baseline models ---------------------------------------------------------


class _ValueTracker:
    """Content matching shared with the real pipeline, budgets unused."""

    def __init__(self, session_id: str):
        self.state = SessionState(session_id)

    def add(self, content: str, parents: frozenset[int], is_source: bool) -> int:
        return self.state.add_value(
            content=content.encode("utf-8"),
            budget=Budget.TOP,
            origins=frozenset(),
            parents=parents,
            is_source=is_source,
            narrow_ctx=False,
        )

    def deps(self, args: dict) -> frozenset[int]:
        return self.state.resolve_deps(args)


class ScalarIfcModel:
    """One scalar sensitivity label per value (public 0 < internal 1 <
    confidential 2), propagated by max; a sink is allowed when the maximum
    contributing label does not exceed the sink op's clearance. The context
    label is the running max of everything seen, and bounds calls with no
    resolvable inputs. Unmapped sources are treated as confidential."""

    def __init__(self, variant: ManifestVariant, session_id: str):
        self.variant = variant
        self.tracker = _ValueTracker(session_id)
        self.labels: dict[int, int] = {}
        self.ctx_label = 0

    def reset(self, session_id: str) -> None:
        self.tracker = _ValueTracker(session_id)
        self.labels = {}
        self.ctx_label = 0

    def _source_label(self, origin_id: str) -> int:
        return int(
            self.variant.source_labels.get(origin_id, self.variant.default_label)
        )

    def absorb_source(self, origin_id: str, content: str) -> None:
        tool, _, argval = origin_id.partition(":")
        decl = match_source(self.variant.manifest, tool, {"origin": argval})
        label = self._source_label(decl.origin_id if decl else origin_id)
        vid = self.tracker.add(content, frozenset(), is_source=True)
        self.labels[vid] = label
        self.ctx_label = max(self.ctx_label, label)

    def absorb_result(self, tool: str, args: dict, content: str) -> None:
        m = self.variant.manifest
        src = match_source(m, tool, args)
        if src is not None:
            vid = self.tracker.add(content, frozenset(), is_source=True)
            self.labels[vid] = self._source_label(src.origin_id)
        else:
            decl = m.tool(tool)
            if decl is not None and decl.role == "source":
                label = self.variant.default_label  # unmapped: fail closed
                vid = self.tracker.add(content, frozenset(), is_source=True)
                self.labels[vid] = label
            else:
                parents = self.tracker.deps(args)
                label = max(
                    (self.labels[p] for p in parents), default=self.ctx_label
                )
                vid = self.tracker.add(content, parents, is_source=False)
                self.labels[vid] = label
        self.ctx_label = max(self.ctx_label, self.labels[vid])

    def decide(self, tool: str, args: dict) -> str:
        try:
            req = derive_req(self.variant.manifest, tool, args)
        except UnknownTool:
            return "allow"
        except MalformedSinkCall:
            return "deny"
        if not req:
            return "allow"
        deps = self.tracker.deps(args)
        agg = (
            max(self.labels[d] for d in deps) if deps else self.ctx_label
        )
        for priv in req:
            clearance = int(self.variant.sink_clearances.get(priv.op.name, 0))
            if agg > clearance:
                return "deny"
        return "allow"


class PfiModel:
    """Per-function isolation: a sink call is denied only when a restricted
    source value flows into its arguments in a single hop (the source result
    quoted directly, no intervening transform). Anything transformed is
    allowed, which is exactly the laundering gap the budget rule closes."""

    def __init__(self, variant: ManifestVariant, session_id: str):
        self.variant = variant
        self.tracker = _ValueTracker(session_id)
        self.labels: dict[int, int] = {}

    def reset(self, session_id: str) -> None:
        self.tracker = _ValueTracker(session_id)
        self.labels = {}

    def absorb_source(self, origin_id: str, content: str) -> None:
        tool, _, argval = origin_id.partition(":")
        decl = match_source(self.variant.manifest, tool, {"origin": argval})
        label = int(
            self.variant.source_labels.get(
                decl.origin_id if decl else origin_id, self.variant.default_label
            )
        )
        vid = self.tracker.add(content, frozenset(), is_source=True)
        self.labels[vid] = label

    def absorb_result(self, tool: str, args: dict, content: str) -> None:
        m = self.variant.manifest
        src = match_source(m, tool, args)
        decl = m.tool(tool)
        if src is not None or (decl is not None and decl.role == "source"):
            label = int(
                self.variant.source_labels.get(
                    src.origin_id if src else f"{tool}:<unmatched>",
                    self.variant.default_label,
                )
            )
            vid = self.tracker.add(content, frozenset(), is_source=True)
            self.labels[vid] = label
        else:
            parents = self.tracker.deps(args)
            self.tracker.add(content, parents, is_source=False)

    def decide(self, tool: str, args: dict) -> str:
        try:
            req = derive_req(self.variant.manifest, tool, args)
        except UnknownTool:
            return "allow"
        except MalformedSinkCall:
            return "deny"
        if not req:
            return "allow"
        deps = self.tracker.deps(args)
        for vid in deps:
            value = self.tracker.state.values[vid]
            if not value.is_source:
                continue
            label = self.labels.get(vid, 0)
            for priv in req:
                clearance = int(
                    self.variant.sink_clearances.get(priv.op.name, 0)
                )
                if label > clearance:
                    return "deny"
        return "allow"


# -- the replay executor -------------------------------------------------------


def replay_trace(
    defense: str,
    variant: ManifestVariant,
    trace: Trace,
    config: Optional[EngineConfig] = None,
    audit: Optional[AuditLog] = None,
    key: Optional[bytes] = None,
) -> TraceVerdict:
    """Feed one trace through the chosen decision pipeline."""
    if defense not in DEFENSES:
        raise ValueError(f"unknown defense: {defense!r}")
    try:
        trace.validate()
    except TraceError as e:
        return TraceVerdict(
            trace_id=trace.trace_id,
            label=trace.label,
            category=trace.category,
            blocked=False,
            blocked_at=None,
            completed=False,
            denied_seqs=(),
            error=str(e),
        )

    if defense == "chaincaps":
        return _replay_chaincaps(variant, trace, config, audit, key)
    return _replay_baseline(defense, variant, trace)


def _next_session(trace_id: str, resets: int) -> str:
    return trace_id if resets == 0 else f"{trace_id}+{resets}"


def _replay_chaincaps(variant, trace, config, audit, key) -> TraceVerdict:
    engine = Engine(variant.manifest, config=config, key=key, audit=audit)
    state = engine.new_session(trace.trace_id)
    resets = 0
    pending_token: Optional[str] = None
    pending_call: Optional[tuple[str, dict]] = None
    denied: list[int] = []
    blocked_at: Optional[int] = None

    for ev in trace.events:
        if ev.kind == "session_reset":
            resets += 1
            state = engine.reset(state, _next_session(trace.trace_id, resets))
            pending_call = None
            pending_token = None
        elif ev.kind == "source_read":
            engine.register_external_source(state, ev.origin_id, ev.content)
        elif ev.kind == "declass_present":
            pending_token = ev.token
        elif ev.kind == "tool_call":
            decision = engine.on_tool_call(
                state, ev.tool, ev.args, token_wire=pending_token
            )
            pending_token = None
            if decision.allowed:
                pending_call = (ev.tool, ev.args)
            else:
                pending_call = None
                denied.append(ev.seq)
                if ev.is_attack_step and blocked_at is None:
                    blocked_at = ev.seq
        elif ev.kind == "tool_result":
            if pending_call is not None:
                engine.on_tool_result(state, pending_call[0], pending_call[1], ev.content)
                pending_call = None
            # A result after a denied call never happened; skip it.

    return TraceVerdict(
        trace_id=trace.trace_id,
        label=trace.label,
        category=trace.category,
        blocked=blocked_at is not None,
        blocked_at=blocked_at,
        completed=not denied,
        denied_seqs=tuple(denied),
    )


def _replay_baseline(defense, variant, trace) -> TraceVerdict:
    model_cls = ScalarIfcModel if defense == "scalar_ifc" else PfiModel
    model = model_cls(variant, trace.trace_id)
    resets = 0
    pending_call: Optional[tuple[str, dict]] = None
    denied: list[int] = []
    blocked_at: Optional[int] = None

    for ev in trace.events:
        if ev.kind == "session_reset":
            resets += 1
            model.reset(_next_session(trace.trace_id, resets))
            pending_call = None
        elif ev.kind == "source_read":
            model.absorb_source(ev.origin_id, ev.content)
        elif ev.kind == "declass_present":
            pass  # baselines have no declassification channel
        elif ev.kind == "tool_call":
            if model.decide(ev.tool, ev.args) == "allow":
                pending_call = (ev.tool, ev.args)
            else:
                pending_call = None
                denied.append(ev.seq)
                if ev.is_attack_step and blocked_at is None:
                    blocked_at = ev.seq
        elif ev.kind == "tool_result":
            if pending_call is not None:
                model.absorb_result(pending_call[0], pending_call[1], ev.content)
                pending_call = None

    return TraceVerdict(
        trace_id=trace.trace_id,
        label=trace.label,
        category=trace.category,
        blocked=blocked_at is not None,
        blocked_at=blocked_at,
        completed=not denied,
        denied_seqs=tuple(denied),
    )


# -- suite metrics ------------------------------------------------------------


@dataclass
class ReplayReport:
    cells: dict = field(default_factory=dict)  # (defense, variant) -> metrics
    ablations: dict = field(default_factory=dict)  # toggle -> metrics
    errors: list = field(default_factory=list)

    def cell(self, defense: str, variant: str) -> dict:
        return self.cells[(defense, variant)]

    def to_json(self) -> dict:
        return {
            "cells": [
                {"defense": d, "variant": v, **metrics_summary(m)}
                for (d, v), m in sorted(self.cells.items())
            ],
            "ablations": [
                {"toggle": t, **metrics_summary(m)}
                for t, m in sorted(self.ablations.items())
            ],
            "errors": list(self.errors),
        }

    def to_text(self) -> str:
        lines = []
        lines.append(
            f"{'defense':<12} {'manifest':<10} {'attack block':>14} {'benign completion':>19}"
        )
        for (d, v), m in sorted(self.cells.items()):
            lines.append(
                f"{d:<12} {v:<10} "
                f"{m['attacks_blocked']:>3}/{m['attacks_total']:<3} "
                f"({m['attack_block_rate']:6.1%}) "
                f"{m['benign_completed']:>3}/{m['benign_total']:<3} "
                f"({m['benign_completion_rate']:6.1%})"
            )
        if self.ablations:
            lines.append("")
            lines.append("ablations (chaincaps, gold manifest):")
            for t, m in sorted(self.ablations.items()):
                lines.append(
                    f"  - {t:<24} attack block "
                    f"{m['attacks_blocked']:>3}/{m['attacks_total']:<3} "
                    f"({m['attack_block_rate']:6.1%})"
                )
        if self.errors:
            lines.append("")
            lines.append(f"trace errors: {len(self.errors)}")
            for e in self.errors:
                lines.append(f"  ! {e}")
        return "\n".join(lines) + "\n"


def metrics_summary(m: dict) -> dict:
    return {k: v for k, v in m.items() if k not in ("verdicts",)}


def _evaluate(defense, variant, corpus, config=None, key=None) -> dict:
    verdicts = {}
    errors = []
    for trace in corpus.traces:
        v = replay_trace(defense, variant, trace, config=config, key=key)
        if v.error:
            errors.append(f"{trace.trace_id}: {v.error}")
            continue
        verdicts[trace.trace_id] = v
    attacks = [v for v in verdicts.values() if v.label == "attack"]
    benign = [v for v in verdicts.values() if v.label == "benign"]
    blocked = sum(1 for v in attacks if v.blocked)
    completed = sum(1 for v in benign if v.completed)
    categories: dict[str, dict] = {}
    for v in attacks:
        c = categories.setdefault(v.category, {"blocked": 0, "total": 0})
        c["total"] += 1
        c["blocked"] += 1 if v.blocked else 0
    return {
        "attacks_total": len(attacks),
        "attacks_blocked": blocked,
        "attack_block_rate": blocked / len(attacks) if attacks else 0.0,
        "benign_total": len(benign),
        "benign_completed": completed,
        "benign_completion_rate": completed / len(benign) if benign else 0.0,
        "categories": categories,
        "verdicts": verdicts,
        "errors": errors,
    }


def run_suite(
    defenses,
    variants: list[ManifestVariant],
    corpus: Corpus,
    ablation_toggles=(),
    ablation_variant: str = "gold",
    key: Optional[bytes] = None,
) -> ReplayReport:
    """Cross-product evaluation of defenses and manifest variants, plus the
    requested single-toggle ablations of the budget pipeline."""
    report = ReplayReport()
    for defense in defenses:
        for variant in variants:
            m = _evaluate(defense, variant, corpus, key=key)
            report.errors.extend(m.pop("errors"))
            report.cells[(defense, variant.name)] = m
    by_name = {v.name: v for v in variants}
    for toggle in ablation_toggles:
        variant = by_name.get(ablation_variant)
        if variant is None:
            continue
        config = EngineConfig().with_ablation(toggle)
        m = _evaluate("chaincaps", variant, corpus, config=config, key=key)
        m.pop("errors")
        report.ablations[toggle] = m
    return report
