"""Sink privileges, scopes, and capability budgets.

A sink privilege is an (operation, scope) pair: the authority to perform one
effectful operation within one scope (a URL prefix, a path prefix, a command
family, an exact value, or anywhere). Privileges are partially ordered by
scope inclusion; a budget is a downward-closed set of privileges stored as
the antichain of its maximal elements.

Everything in this module is immutable and pure. The normalization functions
defined here are the single source of truth for scope values: manifests,
requirement derivation, and tokens all normalize through them, because budget
comparisons are byte-level prefix/equality checks on the normalized forms.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional
from urllib.parse import urlsplit, urlunsplit

__all__ = [
    "AlgebraError",
    "SinkOp",
    "Scope",
    "SinkPrivilege",
    "Budget",
    "STANDARD_OPS",
    "EXFIL_OPS",
    "HTTP_SEND",
    "FILE_WRITE",
    "FILE_READ_EXPORT",
    "EMAIL_SEND",
    "EXEC",
    "DISPLAY",
    "privilege_leq",
    "privilege_intersect",
    "budget_contains",
    "budget_meet",
    "budget_subset",
    "make_scope",
    "make_privilege",
    "parse_privilege",
    "parse_budget",
    "normalize_url_prefix",
    "normalize_path_prefix",
    "standard_top",
    "is_effectively_top",
]


class AlgebraError(ValueError):
    """Raised for malformed ops, scopes, or privilege text forms."""


STANDARD_OPS = (
    "http_send",
    "file_write",
    "file_read_export",
    "email_send",
    "exec",
    "display",
)

# Operations that can move data out of the deployment; wildcard scopes on
# these are what the manifest linter treats as authoring errors.
EXFIL_OPS = frozenset({"http_send", "email_send", "exec"})

_CUSTOM_OP_RE = re.compile(r"^custom\([A-Za-z_][A-Za-z0-9_.-]*\)$")

_DEFAULT_PORTS = {"http": 80, "https": 443, "ws": 80, "wss": 443}


@dataclass(frozen=True, order=True)
class SinkOp:
    """Names an effectful operation. Equality is byte-equality of the name."""

    name: str

    def __post_init__(self) -> None:
        if self.name not in STANDARD_OPS and not _CUSTOM_OP_RE.match(self.name):
            raise AlgebraError(f"unknown op name: {self.name!r}")

    @classmethod
    def custom(cls, name: str) -> "SinkOp":
        return cls(f"custom({name})")

    @property
    def is_exfil_capable(self) -> bool:
        return self.name in EXFIL_OPS

    def __str__(self) -> str:
        return self.name


HTTP_SEND = SinkOp("http_send")
FILE_WRITE = SinkOp("file_write")
FILE_READ_EXPORT = SinkOp("file_read_export")
EMAIL_SEND = SinkOp("email_send")
EXEC = SinkOp("exec")
DISPLAY = SinkOp("display")

SCOPE_KINDS = ("url_prefix", "path_prefix", "command_family", "exact", "any")

# Scope kinds each op may legally carry. Exact is permitted on file ops in
# addition to path prefixes because call-site requirements name one concrete
# path. Custom ops accept every kind.
_OP_SCOPE_KINDS = {
    "http_send": frozenset({"url_prefix", "exact", "any"}),
    "email_send": frozenset({"url_prefix", "exact", "any"}),
    "file_write": frozenset({"path_prefix", "exact", "any"}),
    "file_read_export": frozenset({"path_prefix", "exact", "any"}),
    "exec": frozenset({"command_family", "any"}),
    "display": frozenset({"exact", "any"}),
}


def normalize_url_prefix(raw: str) -> str:
    """Canonicalize a URL prefix: lowercase scheme and host, strip default
    ports, preserve the path byte-for-byte (including any trailing slash).

    The bare form ``scheme://`` is accepted as a scheme-wide prefix.
    """
    raw = raw.strip()
    m = re.match(r"^([A-Za-z][A-Za-z0-9+.-]*)://$", raw)
    if m:
        return f"{m.group(1).lower()}://"
    parts = urlsplit(raw)
    if not parts.scheme or not parts.netloc:
        raise AlgebraError(f"url prefix needs scheme and host: {raw!r}")
    if "@" in parts.netloc:
        raise AlgebraError(f"userinfo not allowed in url scopes: {raw!r}")
    scheme = parts.scheme.lower()
    host = (parts.hostname or "").lower()
    if not host:
        raise AlgebraError(f"url prefix needs a host: {raw!r}")
    port = parts.port
    netloc = host
    if port is not None and _DEFAULT_PORTS.get(scheme) != port:
        netloc = f"{host}:{port}"
    return urlunsplit((scheme, netloc, parts.path, parts.query, parts.fragment))


def normalize_path_prefix(raw: str) -> str:
    """Canonicalize an absolute path: resolve ``.``/``..``, collapse ``//``,
    preserve a trailing slash. Rejects relative paths and root escapes."""
    raw = raw.strip()
    if not raw.startswith("/"):
        raise AlgebraError(f"path scope must be absolute: {raw!r}")
    trailing = raw.endswith("/") and raw != "/"
    out: list[str] = []
    for seg in raw.split("/"):
        if seg in ("", "."):
            continue
        if seg == "..":
            if not out:
                raise AlgebraError(f"path escapes root: {raw!r}")
            out.pop()
        else:
            out.append(seg)
    path = "/" + "/".join(out)
    if trailing and path != "/":
        path += "/"
    return path


@dataclass(frozen=True)
class Scope:
    """Where an effect may occur. ``value`` is used by prefix/exact kinds,
    ``commands`` by command_family; both are empty for ``any``."""

    kind: str
    value: str = ""
    commands: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if self.kind not in SCOPE_KINDS:
            raise AlgebraError(f"unknown scope kind: {self.kind!r}")
        if self.kind == "command_family" and not self.commands:
            raise AlgebraError("command_family scope must be non-empty")

    @classmethod
    def any(cls) -> "Scope":
        return cls("any")

    @classmethod
    def command_family(cls, names: Iterable[str]) -> "Scope":
        cmds = frozenset(n.strip() for n in names if n.strip())
        return cls("command_family", commands=cmds)

    def text(self) -> str:
        if self.kind == "any":
            return "*"
        if self.kind == "command_family":
            return ",".join(sorted(self.commands))
        return self.value

    def __str__(self) -> str:
        return f"{self.kind}:{self.text()}"


def make_scope(op: SinkOp, kind: str, raw) -> Scope:
    """Build a normalized scope for ``op``. This is the one place raw scope
    strings become canonical; every module routes through it."""
    if kind == "any":
        return Scope.any()
    if kind == "url_prefix":
        return Scope("url_prefix", normalize_url_prefix(str(raw)))
    if kind == "path_prefix":
        return Scope("path_prefix", normalize_path_prefix(str(raw)))
    if kind == "command_family":
        if isinstance(raw, str):
            names = raw.split(",")
        else:
            names = list(raw)
        return Scope.command_family(names)
    if kind == "exact":
        value = str(raw).strip()
        if op.name == "http_send":
            value = normalize_url_prefix(value)
        elif op.name == "email_send":
            value = value.lower()
        elif op.name in ("file_write", "file_read_export"):
            value = normalize_path_prefix(value)
        if not value:
            raise AlgebraError("exact scope must be non-empty")
        return Scope("exact", value)
    raise AlgebraError(f"unknown scope kind: {kind!r}")


def _scope_leq(a: Scope, b: Scope) -> bool:
    if b.kind == "any":
        return True
    if a.kind == "any":
        return False
    if a.kind == b.kind:
        if a.kind in ("url_prefix", "path_prefix"):
            return a.value.startswith(b.value)
        if a.kind == "command_family":
            return a.commands <= b.commands
        return a.value == b.value  # exact
    if a.kind == "exact":
        if b.kind in ("url_prefix", "path_prefix"):
            return a.value.startswith(b.value)
        if b.kind == "command_family":
            return a.value in b.commands
    # A prefix or family denotes more than one point and can never sit below
    # an exact value; remaining cross-kind pairs are incomparable.
    return False


def _scope_intersect(a: Scope, b: Scope) -> Optional[Scope]:
    if a.kind == "any":
        return b
    if b.kind == "any":
        return a
    if a.kind == b.kind:
        if a.kind in ("url_prefix", "path_prefix"):
            if a.value.startswith(b.value):
                return a
            if b.value.startswith(a.value):
                return b
            return None
        if a.kind == "command_family":
            both = a.commands & b.commands
            return Scope("command_family", commands=both) if both else None
        return a if a.value == b.value else None
    for ex, other in ((a, b), (b, a)):
        if ex.kind == "exact":
            if other.kind in ("url_prefix", "path_prefix"):
                return ex if ex.value.startswith(other.value) else None
            if other.kind == "command_family":
                return ex if ex.value in other.commands else None
    return None


@dataclass(frozen=True)
class SinkPrivilege:
    """One (op, scope) pair; the unit of downstream authority."""

    op: SinkOp
    scope: Scope

    def __post_init__(self) -> None:
        allowed = _OP_SCOPE_KINDS.get(self.op.name)
        if allowed is not None and self.scope.kind not in allowed:
            raise AlgebraError(
                f"scope kind {self.scope.kind!r} not valid for op {self.op.name!r}"
            )

    def text(self) -> str:
        return f"{self.op.name}:{self.scope.kind}:{self.scope.text()}"

    def __str__(self) -> str:
        return self.text()

    def sort_key(self) -> str:
        return self.text()


def make_privilege(op_name: str, kind: str, raw="") -> SinkPrivilege:
    op = SinkOp(op_name)
    return SinkPrivilege(op, make_scope(op, kind, raw))


def parse_privilege(text: str) -> SinkPrivilege:
    """Parse the canonical ``op:scope_kind:scope_value`` text form."""
    parts = text.split(":", 2)
    if len(parts) != 3:
        raise AlgebraError(f"malformed privilege text: {text!r}")
    op_name, kind, value = parts
    if kind == "any" and value not in ("*", ""):
        raise AlgebraError(f"any-scope must be written as '*': {text!r}")
    return make_privilege(op_name, kind, value)


def privilege_leq(a: SinkPrivilege, b: SinkPrivilege) -> bool:
    """True iff a's authority is included in b's: same op, scope included."""
    return a.op == b.op and _scope_leq(a.scope, b.scope)


def privilege_intersect(a: SinkPrivilege, b: SinkPrivilege) -> Optional[SinkPrivilege]:
    if a.op != b.op:
        return None
    # Comparable scopes dominate in practice; reusing the narrower object
    # keeps meets allocation-free on the hot path.
    if _scope_leq(a.scope, b.scope):
        return a
    if _scope_leq(b.scope, a.scope):
        return b
    scope = _scope_intersect(a.scope, b.scope)
    if scope is None:
        return None
    return SinkPrivilege(a.op, scope)


def _antichain(privs: Iterable[SinkPrivilege]) -> frozenset[SinkPrivilege]:
    items = set(privs)
    keep = set()
    for p in items:
        if not any(q != p and privilege_leq(p, q) for q in items):
            keep.add(p)
    return frozenset(keep)


@dataclass(frozen=True)
class Budget:
    """A downward-closed privilege set, stored as its maximal antichain.

    ``Budget.TOP`` is the lattice top (every privilege of every op, including
    custom ops); it is the identity of meet. The empty budget is bottom.
    Construct through :meth:`of` so the antichain invariant always holds.
    """

    maximal: frozenset[SinkPrivilege] = frozenset()
    is_top: bool = False

    TOP: "Budget" = None  # type: ignore[assignment]
    BOTTOM: "Budget" = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.is_top and self.maximal:
            raise AlgebraError("top budget carries no explicit elements")

    @classmethod
    def of(cls, privs: Iterable[SinkPrivilege]) -> "Budget":
        return cls(_antichain(privs))

    def serialize(self) -> list[str]:
        if self.is_top:
            return ["*"]
        return sorted(p.text() for p in self.maximal)

    def __iter__(self) -> Iterator[SinkPrivilege]:
        return iter(sorted(self.maximal, key=SinkPrivilege.sort_key))

    def __str__(self) -> str:
        return "{" + ", ".join(self.serialize()) + "}"


Budget.TOP = Budget(is_top=True)
Budget.BOTTOM = Budget()


def parse_budget(items: Iterable[str]) -> Budget:
    """Parse a budget from its serialized privilege list; ``["*"]`` is top."""
    items = list(items)
    if items == ["*"]:
        return Budget.TOP
    if "*" in items:
        raise AlgebraError("'*' must be the sole element of a top budget")
    return Budget.of(parse_privilege(t) for t in items)


def budget_contains(b: Budget, s: SinkPrivilege) -> bool:
    """Membership of a privilege in the budget's downward closure."""
    if b.is_top:
        return True
    return any(privilege_leq(s, m) for m in b.maximal)


def budget_meet(a: Budget, b: Budget) -> Budget:
    """Greatest lower bound: intersection of the two downward closures."""
    if a.is_top:
        return b
    if b.is_top:
        return a
    if a.maximal == b.maximal:
        return a
    if budget_subset(a, b):
        return a
    if budget_subset(b, a):
        return b
    out = []
    for p in a.maximal:
        for q in b.maximal:
            r = privilege_intersect(p, q)
            if r is not None:
                out.append(r)
    return Budget.of(out)


def budget_subset(a: Budget, b: Budget) -> bool:
    if b.is_top:
        return True
    if a.is_top:
        return False
    return all(budget_contains(b, m) for m in a.maximal)


def budget_union_maximal(a: Budget, b: Budget) -> Budget:
    """Upper bound by pooling maximal elements. Not used by enforcement
    proper; it models the ablation that replaces the meet rule."""
    if a.is_top or b.is_top:
        return Budget.TOP
    return Budget.of(a.maximal | b.maximal)


def standard_top() -> Budget:
    """All standard ops at Any scope (the widest budget writable without
    the '*' form; custom ops excluded)."""
    return Budget.of(SinkPrivilege(SinkOp(op), Scope.any()) for op in STANDARD_OPS)


def is_effectively_top(b: Budget) -> bool:
    """True when the budget grants every standard op everywhere."""
    if b.is_top:
        return True
    return all(
        budget_contains(b, SinkPrivilege(SinkOp(op), Scope.any()))
        for op in STANDARD_OPS
    )
