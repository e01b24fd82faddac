"""Per-session runtime state: tracked values, the dataflow DAG, and the
context budget.

The proxy cannot see model internals, so dependency resolution is
approximated by content matching: a tracked value contributed to a call's
arguments when the two share an exact byte substring of at least
``min_fragment_len`` bytes (tracked values shorter than that require exact
field equality, and values beyond ``max_index_bytes`` are matched by whole
digest only). Misses fall back to the context budget, which is intersected
with every value that enters model context and therefore bounds arguments
with no resolvable lineage.

One SessionState is owned by one in-flight request pipeline at a time;
distinct sessions share nothing.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Iterable, Optional

from .algebra import Budget, budget_meet, budget_subset

__all__ = ["LineageError", "TrackedValue", "SessionState", "reset_session"]

_HASH_BASE = 1000003
_HASH_MOD = (1 << 61) - 1

DEFAULT_MIN_FRAGMENT = 24
DEFAULT_MAX_INDEX_BYTES = 1 << 20


class LineageError(RuntimeError):
    """Internal lineage fault (programming error, never a policy denial)."""


@dataclass(frozen=True)
class TrackedValue:
    id: int
    content: bytes
    budget: Budget
    origins: frozenset[str]
    parents: frozenset[int]
    is_source: bool = False

    @property
    def content_digest(self) -> str:
        return hashlib.sha256(self.content).hexdigest()


def _window_hashes(data: bytes, w: int) -> Iterable[tuple[int, int]]:
    """Yield (offset, rolling hash) for every w-byte window of data."""
    n = len(data)
    if n < w:
        return
    h = 0
    for b in data[:w]:
        h = (h * _HASH_BASE + b) % _HASH_MOD
    yield 0, h
    shift = pow(_HASH_BASE, w - 1, _HASH_MOD)
    for i in range(1, n - w + 1):
        h = ((h - data[i - 1] * shift) * _HASH_BASE + data[i + w - 1]) % _HASH_MOD
        yield i, h


class SessionState:
    """Value identities, budgets, origins, parents, and the context budget
    for one session. Value ids start at 1 and never recur within a session."""

    def __init__(
        self,
        session_id: str,
        min_fragment_len: int = DEFAULT_MIN_FRAGMENT,
        max_index_bytes: int = DEFAULT_MAX_INDEX_BYTES,
    ):
        self.session_id = session_id
        self.min_fragment_len = min_fragment_len
        self.max_index_bytes = max_index_bytes
        self.values: dict[int, TrackedValue] = {}
        self.ctx_budget: Budget = Budget.TOP
        self._next_id = 1
        self._windows: dict[int, set[int]] = {}
        self._short: dict[bytes, set[int]] = {}
        self._digests: dict[str, set[int]] = {}
        self._dep_cache: Optional[tuple[int, str, frozenset[int]]] = None

    # -- registration ------------------------------------------------------

    def add_value(
        self,
        content: bytes,
        budget: Budget,
        origins: frozenset[str],
        parents: frozenset[int],
        is_source: bool = False,
        narrow_ctx: bool = True,
    ) -> int:
        """Low-level insertion used by the engine; the register_* wrappers
        below implement the default propagation semantics."""
        vid = self._next_id
        self._next_id += 1
        value = TrackedValue(
            id=vid,
            content=content,
            budget=budget,
            origins=origins,
            parents=parents,
            is_source=is_source,
        )
        self.values[vid] = value
        self._index(vid, content)
        if narrow_ctx:
            self.ctx_budget = budget_meet(self.ctx_budget, budget)
        return vid

    def register_source(self, origin_id: str, content: bytes, init: Budget) -> int:
        """A source value enters from an origin: budget := Init(origin), and
        the context budget narrows because the content enters model context."""
        return self.add_value(
            content=content,
            budget=init,
            origins=frozenset({origin_id}),
            parents=frozenset(),
            is_source=True,
        )

    def register_derived(
        self, parents: Iterable[int], pass_budget: Budget, content: bytes
    ) -> int:
        """A tool output derived from tracked inputs: budget is the meet of
        the pass-through bound, every parent budget, and the context budget
        (the result re-enters model context)."""
        parent_ids = frozenset(parents)
        budget = budget_meet(pass_budget, self.ctx_budget)
        origins: set[str] = set()
        for pid in parent_ids:
            parent = self.values.get(pid)
            if parent is None:
                raise LineageError(f"unknown parent value id {pid}")
            budget = budget_meet(budget, parent.budget)
            origins |= parent.origins
        vid = self.add_value(
            content=content,
            budget=budget,
            origins=frozenset(origins),
            parents=parent_ids,
        )
        # Monotonicity along every DAG edge, by construction.
        for pid in parent_ids:
            assert budget_subset(self.values[vid].budget, self.values[pid].budget)
        return vid

    # -- dependency resolution ----------------------------------------------

    def _index(self, vid: int, content: bytes) -> None:
        w = self.min_fragment_len
        self._digests.setdefault(
            hashlib.sha256(content).hexdigest(), set()
        ).add(vid)
        if len(content) < w:
            self._short.setdefault(content, set()).add(vid)
            return
        if len(content) > self.max_index_bytes:
            return
        for _, h in _window_hashes(content, w):
            self._windows.setdefault(h, set()).add(vid)

    def resolve_deps(self, args) -> frozenset[int]:
        """Value ids whose content overlaps any string field of ``args``:
        a shared substring of at least min_fragment_len bytes, exact field
        equality for short values, whole-digest equality for oversize ones.

        The decision path resolves the same arguments twice (once to
        authorize, once to propagate), so the last resolution is memoized
        against the value count and the serialized arguments.
        """
        try:
            key = json.dumps(args, sort_keys=True, default=str)
        except (TypeError, ValueError):
            key = repr(args)
        cached = self._dep_cache
        if cached is not None and cached[0] == len(self.values) and cached[1] == key:
            return cached[2]
        w = self.min_fragment_len
        found: set[int] = set()
        for s in _iter_arg_strings(args):
            data = s.encode("utf-8", errors="surrogatepass")
            if data in self._short:
                found |= self._short[data]
            digest = hashlib.sha256(data).hexdigest()
            if digest in self._digests:
                found |= self._digests[digest]
            for off, h in _window_hashes(data, w):
                hit = self._windows.get(h)
                if not hit:
                    continue
                window = data[off : off + w]
                for vid in hit:
                    if vid in found:
                        continue
                    if window in self.values[vid].content:
                        found.add(vid)
        deps = frozenset(found)
        self._dep_cache = (len(self.values), key, deps)
        return deps

    def effective_budget(self, deps: Iterable[int]) -> Budget:
        """Meet of the context budget and all dependency budgets; with no
        dependencies the context budget alone bounds the call."""
        agg = self.ctx_budget
        for vid in deps:
            value = self.values.get(vid)
            if value is None:
                raise LineageError(f"unknown value id {vid}")
            agg = budget_meet(agg, value.budget)
        return agg

    # -- lineage walks -------------------------------------------------------

    def source_ancestors(self, deps: Iterable[int]) -> list[TrackedValue]:
        """All transitive ancestors (including the values themselves) that
        are sources, deduplicated, in id order."""
        seen: set[int] = set()
        stack = list(deps)
        out: list[TrackedValue] = []
        while stack:
            vid = stack.pop()
            if vid in seen:
                continue
            seen.add(vid)
            value = self.values.get(vid)
            if value is None:
                raise LineageError(f"unknown value id {vid}")
            if value.is_source:
                out.append(value)
            stack.extend(value.parents)
        out.sort(key=lambda v: v.id)
        return out


def _iter_arg_strings(obj):
    if isinstance(obj, str):
        yield obj
    elif isinstance(obj, dict):
        for v in obj.values():
            yield from _iter_arg_strings(v)
    elif isinstance(obj, (list, tuple)):
        for v in obj:
            yield from _iter_arg_strings(v)


def _next_session_id(old: str) -> str:
    base, _, n = old.rpartition("+")
    if base and n.isdigit():
        return f"{base}+{int(n) + 1}"
    return f"{old}+1"


def reset_session(state: SessionState, session_id: Optional[str] = None) -> SessionState:
    """Fresh session at a task boundary: empty value map, context budget back
    to top, new session id. Prior state is discarded; ids restart."""
    return SessionState(
        session_id if session_id is not None else _next_session_id(state.session_id),
        min_fragment_len=state.min_fragment_len,
        max_index_bytes=state.max_index_bytes,
    )
