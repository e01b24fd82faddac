"""Shared fixtures: a deterministic privilege universe for lattice-law tests
and loaded bundles (manifests, corpus) reused across modules."""

from __future__ import annotations

import random

import pytest

from chaincaps.algebra import Budget, SinkPrivilege, make_privilege
from chaincaps.resources import bundled_corpus, bundled_variant


def build_universe() -> list[SinkPrivilege]:
    """A mixed universe of privileges with plenty of comparable chains:
    nested URL prefixes, nested paths, command-family subsets, exacts, any."""
    privs: list[SinkPrivilege] = []

    hosts = ("api.example.com", "cdn.example.com", "intranet.corp",
             "partner.example", "mail.corp.example")
    segments = ("", "v1/", "v1/jobs/", "v1/jobs/batch/", "v2/", "assets/",
                "assets/img/", "teams/", "teams/eng/")
    url_chains = [f"https://{h}/{s}" for h in hosts for s in segments]
    for op in ("http_send", "email_send"):
        privs.append(make_privilege(op, "any"))
        for u in url_chains:
            privs.append(make_privilege(op, "url_prefix", u))
        for u in url_chains[::3]:
            privs.append(make_privilege(op, "exact", u + "leaf"))

    path_chains = [
        "/", "/data/", "/data/hr/", "/data/hr/payroll/", "/data/public/",
        "/data/public/site/", "/workspace/", "/workspace/reports/",
        "/workspace/reports/q3/", "/workspace/tmp/", "/archive/",
        "/archive/finance/", "/archive/finance/2026/", "/vault/", "/vault/keys/",
    ]
    for op in ("file_write", "file_read_export"):
        privs.append(make_privilege(op, "any"))
        for p in path_chains:
            privs.append(make_privilege(op, "path_prefix", p))
        for p in path_chains[:10]:
            privs.append(make_privilege(op, "exact", p + "file.txt"))

    fam_base = ["grep", "awk", "sed", "python", "pandoc", "sort", "jq", "tar"]
    privs.append(make_privilege("exec", "any"))
    for i in range(1, len(fam_base) + 1):
        privs.append(make_privilege("exec", "command_family", fam_base[:i]))
    for name in fam_base:
        privs.append(make_privilege("exec", "command_family", [name]))
    for pair in (["grep", "python"], ["sed", "sort"], ["jq", "tar"], ["awk", "jq"]):
        privs.append(make_privilege("exec", "command_family", pair))

    privs.append(make_privilege("display", "any"))
    for channel in ("user_console", "admin_console", "dashboard", "tty0",
                    "tty1", "kiosk", "pager", "wallboard"):
        privs.append(make_privilege("display", "exact", channel))

    out, seen = [], set()
    for p in privs:
        if p not in seen:
            seen.add(p)
            out.append(p)
    return out


@pytest.fixture(scope="session")
def universe() -> list[SinkPrivilege]:
    u = build_universe()
    assert len(u) >= 200
    return u


@pytest.fixture(scope="session")
def rng() -> random.Random:
    return random.Random(0xC4A5)


def random_budget(rng: random.Random, universe, max_elems: int = 4) -> Budget:
    k = rng.randint(0, max_elems)
    return Budget.of(rng.sample(universe, k)) if k else Budget.BOTTOM


@pytest.fixture(scope="session")
def gold_variant():
    return bundled_variant("gold")


@pytest.fixture(scope="session")
def all_variants():
    return [bundled_variant(n) for n in ("gold", "careful", "naive")]


@pytest.fixture(scope="session")
def corpus():
    return bundled_corpus()
