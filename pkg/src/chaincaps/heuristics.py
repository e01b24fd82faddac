"""Keyword heuristics over tool names and descriptions.

Used in two places: the enforcement engine fails closed on unknown tools
whose name or description looks sink-like, and the manifest linter flags
declared tools whose role disagrees with the same wordlist. Matching is
case-insensitive on whole words (names are tokenized on non-alphanumerics);
the two-word entry ``fetch-out`` matches as an adjacent token pair.
"""

from __future__ import annotations

import re

SINK_KEYWORDS = (
    "send",
    "post",
    "upload",
    "write",
    "email",
    "mail",
    "exec",
    "run",
    "shell",
    "publish",
    "delete",
    "http",
    "fetch-out",
    "export",
    "notify",
)

READ_KEYWORDS = ("read", "fetch", "get", "load", "query")

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def _tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def match_sink_keyword(name: str, description: str = "") -> str | None:
    """Return the first sink keyword matched in name or description."""
    toks = _tokens(name) + _tokens(description)
    tokset = set(toks)
    bigrams = {f"{a}-{b}" for a, b in zip(toks, toks[1:])}
    for kw in SINK_KEYWORDS:
        if "-" in kw:
            if kw in bigrams:
                return kw
        elif kw in tokset:
            return kw
    return None


def match_read_keyword(name: str) -> str | None:
    toks = set(_tokens(name))
    for kw in READ_KEYWORDS:
        if kw in toks:
            return kw
    return None
