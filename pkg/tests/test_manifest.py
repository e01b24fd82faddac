"""Manifest parsing, requirement derivation, source matching, and the six
lint rules."""

from __future__ import annotations

import pytest

from chaincaps.algebra import make_privilege, parse_budget
from chaincaps.manifest import (
    MalformedSinkCall,
    ManifestError,
    UnknownTool,
    derive_req,
    lint,
    match_source,
    parse_manifest,
    serialize_manifest,
)
from chaincaps.resources import bundled_manifest


MINIMAL = """
{
  "version": 1,
  "sources": [],
  "tools": []
}
"""


def test_parse_empty_manifest():
    m = parse_manifest(MINIMAL)
    assert m.sources == () and m.tools == ()


def test_parse_figure_manifest_budgets():
    m = bundled_manifest("figure1")
    by_origin = {s.origin_id: s for s in m.sources}
    hr = by_origin["read_file:/data/hr/"]
    assert hr.init_budget == parse_budget(["display:any:*"])
    news = by_origin["fetch_url:https://news.com/"]
    assert news.init_budget == parse_budget(
        ["display:any:*", "email_send:any:*", "http_send:any:*"]
    )


def test_duplicate_tool_name_rejected():
    text = """
    {"version": 1, "sources": [],
     "tools": [
       {"name": "t", "role": "transform", "exec": [], "pass": [], "sink_args": []},
       {"name": "t", "role": "transform", "exec": [], "pass": [], "sink_args": []}
     ]}
    """
    with pytest.raises(ManifestError, match="duplicate"):
        parse_manifest(text)


def test_unknown_op_rejected():
    text = """
    {"version": 1, "sources": [{"origin": "read_file:/x/", "init": ["teleport:any:*"]}],
     "tools": []}
    """
    with pytest.raises(ManifestError, match="unknown op"):
        parse_manifest(text)


def test_incompatible_scope_kind_rejected():
    text = """
    {"version": 1, "sources": [{"origin": "read_file:/x/", "init": ["exec:exact:ls"]}],
     "tools": []}
    """
    with pytest.raises(ManifestError):
        parse_manifest(text)


def test_sink_requires_exec_and_rules():
    text = """
    {"version": 1, "sources": [],
     "tools": [{"name": "s", "role": "sink", "exec": [], "pass": [], "sink_args": []}]}
    """
    with pytest.raises(ManifestError, match="requires non-empty"):
        parse_manifest(text)


def test_sink_arg_op_must_be_covered_by_exec():
    text = """
    {"version": 1, "sources": [],
     "tools": [{"name": "s", "role": "sink", "exec": ["display:any:*"], "pass": [],
                "sink_args": [{"op": "http_send", "arg_path": "url", "scope_kind": "exact"}]}]}
    """
    with pytest.raises(ManifestError, match="no covering exec"):
        parse_manifest(text)


def test_serialize_parse_round_trip():
    for name in ("gold", "careful", "naive", "figure1", "alltop"):
        m = bundled_manifest(name)
        again = parse_manifest(serialize_manifest(m))
        assert serialize_manifest(again) == serialize_manifest(m)
        assert [s.origin_id for s in again.sources] == [s.origin_id for s in m.sources]
        for t1, t2 in zip(m.tools, again.tools):
            assert t1.tool_name == t2.tool_name
            assert t1.exec_privs == t2.exec_privs
            assert t1.pass_through == t2.pass_through


# -- derive_req --------------------------------------------------------------------


def test_derive_req_http_exact():
    m = bundled_manifest("gold")
    req = derive_req(m, "send_http", {"url": "https://api.example.com/v1/push"})
    assert req == frozenset(
        {make_privilege("http_send", "exact", "https://api.example.com/v1/push")}
    )


def test_derive_req_write_under_prefix():
    m = bundled_manifest("gold")
    req = derive_req(m, "write_file", {"path": "/tmp/reports/q3.md", "content": "x"})
    (priv,) = req
    assert priv == make_privilege("file_write", "exact", "/tmp/reports/q3.md")
    from chaincaps.algebra import privilege_leq

    assert privilege_leq(priv, make_privilege("file_write", "path_prefix", "/tmp/reports/"))


def test_derive_req_pure_tool_empty():
    m = bundled_manifest("gold")
    assert derive_req(m, "summarize", {"text": "hello"}) == frozenset()


def test_derive_req_command_family_uses_command_word():
    m = bundled_manifest("gold")
    req = derive_req(m, "run_shell", {"command": "grep -rn foo /workspace"})
    assert req == frozenset({make_privilege("exec", "command_family", ["grep"])})


def test_derive_req_missing_arg_is_malformed():
    m = bundled_manifest("gold")
    with pytest.raises(MalformedSinkCall):
        derive_req(m, "send_http", {"payload": "no url"})
    with pytest.raises(MalformedSinkCall):
        derive_req(m, "send_http", {"url": 42})


def test_derive_req_unknown_tool():
    m = bundled_manifest("gold")
    with pytest.raises(UnknownTool):
        derive_req(m, "beam_up", {})


# -- match_source --------------------------------------------------------------------


def test_match_source_figure_example():
    m = bundled_manifest("gold")
    decl = match_source(m, "read_file", {"path": "/data/hr/salaries.csv"})
    assert decl is not None and decl.origin_id == "read_file:/data/hr/"


def test_match_source_none_for_uncovered():
    m = bundled_manifest("gold")
    assert match_source(m, "read_file", {"path": "/public/readme.txt"}) is None


def test_match_source_longest_pattern_wins():
    text = """
    {"version": 1,
     "sources": [
       {"origin": "read_file:/data/", "init": ["display:any:*", "http_send:url_prefix:https://a/"]},
       {"origin": "read_file:/data/hr/", "init": ["display:any:*"]}
     ],
     "tools": [{"name": "read_file", "role": "source", "exec": [], "pass": [], "sink_args": []}]}
    """
    m = parse_manifest(text)
    decl = match_source(m, "read_file", {"path": "/data/hr/x"})
    assert decl.origin_id == "read_file:/data/hr/"
    decl = match_source(m, "read_file", {"path": "/data/other/x"})
    assert decl.origin_id == "read_file:/data/"


def test_match_source_normalizes_traversal():
    m = bundled_manifest("gold")
    decl = match_source(m, "read_file", {"path": "/data/public/../hr/salaries.csv"})
    assert decl is not None and decl.origin_id == "read_file:/data/hr/"


# -- lint ---------------------------------------------------------------------------


def _findings(m):
    out = {}
    for f in lint(m):
        out.setdefault(f.rule_id, []).append(f)
    return out


def test_gold_manifest_lints_clean():
    assert lint(bundled_manifest("gold")) == []


def test_naive_manifest_has_l1_and_l2_errors():
    by_rule = _findings(bundled_manifest("naive"))
    assert by_rule.get("L1"), "expected wildcard-scope errors"
    assert any(f.subject == "fetch_url" for f in by_rule.get("L2", []))
    assert all(f.severity == "error" for f in by_rule["L1"] + by_rule["L2"])


def test_l1_flags_wildcard_init():
    text = """
    {"version": 1,
     "sources": [{"origin": "read_file:/data/hr/", "init": ["http_send:any:*"]}],
     "tools": [{"name": "read_file", "role": "source", "exec": [], "pass": [], "sink_args": []}]}
    """
    by_rule = _findings(parse_manifest(text))
    assert any("http_send" in f.message for f in by_rule["L1"])


def test_l3_flags_sinky_name_on_transform():
    text = """
    {"version": 1, "sources": [],
     "tools": [{"name": "upload_report", "role": "transform", "exec": [],
                "pass": ["display:any:*"], "sink_args": []}]}
    """
    by_rule = _findings(parse_manifest(text))
    assert by_rule.get("L3") and by_rule["L3"][0].severity == "error"


def test_l4_flags_top_pass_on_transform():
    text = """
    {"version": 1, "sources": [],
     "tools": [{"name": "mixit", "role": "transform", "exec": [], "pass": ["*"],
                "sink_args": []}]}
    """
    by_rule = _findings(parse_manifest(text))
    assert by_rule.get("L4") and by_rule["L4"][0].severity == "warning"


def test_l5_flags_non_canonical_budget():
    text = """
    {"version": 1,
     "sources": [{"origin": "read_file:/d/", "init":
       ["display:any:*", "display:exact:user_console"]}],
     "tools": [{"name": "read_file", "role": "source", "exec": [], "pass": [],
                "sink_args": []}]}
    """
    by_rule = _findings(parse_manifest(text))
    assert by_rule.get("L5") and by_rule["L5"][0].severity == "warning"


def test_l6_flags_unreachable_exec():
    text = """
    {"version": 1,
     "sources": [{"origin": "read_file:/d/", "init": ["display:any:*"]}],
     "tools": [
       {"name": "read_file", "role": "source", "exec": [], "pass": [], "sink_args": []},
       {"name": "send_http", "role": "sink", "exec": ["http_send:any:*"],
        "pass": ["display:any:*"],
        "sink_args": [{"op": "http_send", "arg_path": "url", "scope_kind": "exact"}]}
     ]}
    """
    by_rule = _findings(parse_manifest(text))
    assert any(f.subject == "send_http" for f in by_rule.get("L6", []))


def test_l6_overlap_counts_scoped_init():
    # A scoped init overlapping a wide exec keeps the sink live.
    m = bundled_manifest("gold")
    assert not _findings(m).get("L6")


def test_lint_deterministic():
    m = bundled_manifest("naive")
    assert lint(m) == lint(m)


def test_derived_req_within_exec_for_bundled_sinks():
    m = bundled_manifest("gold")
    from chaincaps.algebra import privilege_leq

    cases = [
        ("send_http", {"url": "https://anywhere.example/x"}),
        ("send_email", {"to": "someone@example.com"}),
        ("write_file", {"path": "/any/where.txt"}),
        ("run_shell", {"command": "xz -9 file"}),
        ("export_report", {"destination": "/mnt/usb/doc.pdf"}),
        ("display_user", {"channel": "user_console"}),
    ]
    for tool, args in cases:
        decl = m.tool(tool)
        for r in derive_req(m, tool, args):
            assert any(privilege_leq(r, e) for e in decl.exec_privs)
