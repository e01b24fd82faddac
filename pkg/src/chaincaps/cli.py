"""Command-line entry point: serve the proxy, lint manifests, replay the
trace corpus, mint declassification tokens, and run the latency bench.

Exit codes: ``lint`` returns 0 (clean), 1 (warnings only), or 2 (errors);
``replay`` returns 0 only when every corpus threshold is met, 2 when inputs
are missing; ``serve`` returns 2 on lint errors without --force and 3 when
the key or the listen address is unusable.
"""

from __future__ import annotations

import argparse
import json
import os
import signal
import sys
from pathlib import Path

from . import __version__
from .bench import run_bench
from .declass import mint_token
from .enforcement import AuditLog, EngineConfig, ABLATION_TOGGLES
from .algebra import parse_privilege
from .manifest import ManifestError, lint, load_manifest
from .proxy import ProxyServer, StdioUpstream, ToolProxy
from .replay import DEFENSES, load_corpus, replay_trace, run_suite
from .resources import MANIFEST_VARIANTS, bundled_corpus, bundled_variant

KEY_FILE_ENV = "CHAINCAPS_KEY_FILE"

__all__ = ["main", "KEY_FILE_ENV"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chaincaps",
        description="sink-specific capability budgets for tool-using agents",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_serve = sub.add_parser("serve", help="run the tool-call proxy")
    p_serve.add_argument("--config", help="JSON config file")
    p_serve.add_argument("--manifest", help="manifest path (overrides config)")
    p_serve.add_argument("--key-file", help="signing key path (overrides config)")
    p_serve.add_argument("--listen", default=None, help="host:port (default 127.0.0.1:8831)")
    p_serve.add_argument("--audit-log", default=None, help="audit JSONL path")
    p_serve.add_argument("--upstream", action="append", default=[],
                         help="NAME=CMD shell-less upstream command (repeatable)")
    p_serve.add_argument("--ablate", action="append", default=[], choices=ABLATION_TOGGLES)
    p_serve.add_argument("--force", action="store_true",
                         help="serve even if the manifest has lint errors")

    p_lint = sub.add_parser("lint", help="lint a manifest")
    p_lint.add_argument("--manifest", help="manifest path")
    p_lint.add_argument("--manifest-variant", choices=MANIFEST_VARIANTS,
                        help="lint a bundled manifest variant instead")
    p_lint.add_argument("--json", action="store_true")

    p_replay = sub.add_parser("replay", help="replay the trace corpus")
    p_replay.add_argument("--corpus", help="corpus index.json (default: bundled)")
    p_replay.add_argument("--defense", action="append", default=[], choices=DEFENSES)
    p_replay.add_argument("--manifest-variant", action="append", default=[],
                          choices=MANIFEST_VARIANTS)
    p_replay.add_argument("--ablate", action="append", default=[], choices=ABLATION_TOGGLES)
    p_replay.add_argument("--trace", help="replay a single trace file (JSONL)")
    p_replay.add_argument("--trace-label", default="attack", choices=["attack", "benign"])
    p_replay.add_argument("--json", action="store_true")
    p_replay.add_argument("--out", help="write the JSON report here")

    p_mint = sub.add_parser("mint-token", help="mint a one-shot declassification token")
    p_mint.add_argument("--key-file", required=True)
    p_mint.add_argument("--session", required=True, help="session id the token binds to")
    p_mint.add_argument("--privilege", action="append", required=True,
                        help="required privilege text form (repeatable)")
    p_mint.add_argument("--digest", required=True,
                        help="lineage digest from the denial's audit record")
    p_mint.add_argument("--ttl", type=int, default=300)

    p_bench = sub.add_parser("bench", help="measure proxy-added latency")
    p_bench.add_argument("--calls", type=int, default=10_000)
    p_bench.add_argument("--payload-bytes", type=int, default=256)
    p_bench.add_argument("--manifest-variant", default="gold", choices=MANIFEST_VARIANTS)
    p_bench.add_argument("--json", action="store_true")

    return parser


def _load_manifest_arg(path: str | None, variant: str | None):
    if path:
        return load_manifest(path)
    name = variant or "gold"
    return bundled_variant(name).manifest


def cmd_lint(opts) -> int:
    try:
        manifest = _load_manifest_arg(opts.manifest, opts.manifest_variant)
    except (ManifestError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    findings = lint(manifest)
    if opts.json:
        print(json.dumps([f.__dict__ for f in findings], indent=2))
    else:
        for f in findings:
            print(f"{f.severity:<8} {f.rule_id} {f.subject}: {f.message}")
        print(f"{len(findings)} finding(s)")
    if any(f.severity == "error" for f in findings):
        return 2
    if findings:
        return 1
    return 0


def cmd_replay(opts) -> int:
    try:
        corpus = load_corpus(opts.corpus) if opts.corpus else bundled_corpus()
    except OSError as e:
        print(f"error: cannot load corpus: {e}", file=sys.stderr)
        return 2

    variants = []
    for name in opts.manifest_variant or list(MANIFEST_VARIANTS):
        variants.append(bundled_variant(name))
    defenses = opts.defense or list(DEFENSES)

    if opts.trace:
        from .replay import Trace, load_trace_events

        trace = Trace(
            trace_id=Path(opts.trace).stem,
            label=opts.trace_label,
            category="adhoc",
            events=load_trace_events(opts.trace),
        )
        verdict = replay_trace(defenses[0], variants[0], trace)
        print(json.dumps(verdict.__dict__, indent=2, default=list))
        return 0

    report = run_suite(
        defenses, variants, corpus, ablation_toggles=opts.ablate
    )
    doc = report.to_json()
    if opts.out:
        Path(opts.out).write_text(json.dumps(doc, indent=2), encoding="utf-8")
    if opts.json:
        print(json.dumps(doc, indent=2))
    else:
        print(report.to_text(), end="")

    ok = True
    evaluated = {(d, v.name) for d in defenses for v in variants}
    for th in corpus.thresholds:
        cell_key = (th["defense"], th["variant"])
        if cell_key not in evaluated:
            continue
        cell = report.cell(*cell_key)
        if cell["attack_block_rate"] < th.get("min_attack_block_rate", 0.0) - 1e-12:
            ok = False
        if cell["benign_completion_rate"] < th.get("min_benign_completion_rate", 0.0) - 1e-12:
            ok = False
    return 0 if ok else 1


def cmd_mint_token(opts) -> int:
    try:
        key = Path(opts.key_file).read_bytes()
    except OSError as e:
        print(f"error: cannot read key: {e}", file=sys.stderr)
        return 3
    req = frozenset(parse_privilege(p) for p in opts.privilege)
    token = mint_token(key, opts.session, req, opts.digest, opts.ttl)
    print(token.wire())
    return 0


def cmd_bench(opts) -> int:
    manifest = bundled_variant(opts.manifest_variant).manifest
    stats = run_bench(manifest, calls=opts.calls, payload_bytes=opts.payload_bytes)
    floor = run_bench(manifest, calls=min(opts.calls, 2000),
                      payload_bytes=opts.payload_bytes, enforce=False)
    out = {"pipeline": stats, "transport_floor": floor}
    if opts.json:
        print(json.dumps(out, indent=2))
    else:
        print(
            f"proxy-added latency over {stats['calls']} calls "
            f"({stats['payload_bytes']} B payloads):"
        )
        print(f"  median {stats['median_ms']:.3f} ms   p95 {stats['p95_ms']:.3f} ms   "
              f"max {stats['max_ms']:.3f} ms")
        print(f"  transport floor (enforcement off): median {floor['median_ms']:.3f} ms")
    return 0


def cmd_serve(opts) -> int:
    cfg = {}
    if opts.config:
        try:
            cfg = json.loads(Path(opts.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            print(f"error: bad config: {e}", file=sys.stderr)
            return 2

    manifest_path = opts.manifest or cfg.get("manifest")
    try:
        manifest = (
            load_manifest(manifest_path)
            if manifest_path
            else bundled_variant("gold").manifest
        )
    except (ManifestError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    findings = lint(manifest)
    errors = [f for f in findings if f.severity == "error"]
    if errors and not opts.force:
        for f in errors:
            print(f"lint error {f.rule_id} {f.subject}: {f.message}", file=sys.stderr)
        print("refusing to serve (use --force to override)", file=sys.stderr)
        return 2

    key = None
    key_path = opts.key_file or cfg.get("key_file") or os.environ.get(KEY_FILE_ENV)
    if key_path:
        try:
            key = Path(key_path).read_bytes()
        except OSError as e:
            print(f"error: cannot read key file: {e}", file=sys.stderr)
            return 3

    upstreams = []
    for spec in opts.upstream or []:
        name, _, cmd = spec.partition("=")
        upstreams.append(StdioUpstream(name, cmd.split()))
    for u in cfg.get("upstreams", []):
        upstreams.append(StdioUpstream(u["name"], u["command"]))

    listen = opts.listen or cfg.get("listen", "127.0.0.1:8831")
    host, _, port_text = listen.rpartition(":")
    audit_stream = None
    audit_path = opts.audit_log or cfg.get("audit_log")
    if audit_path:
        audit_stream = open(audit_path, "a", encoding="utf-8")

    config = EngineConfig()
    for toggle in opts.ablate:
        config = config.with_ablation(toggle)

    proxy = ToolProxy(
        manifest, upstreams, config=config, key=key, audit=AuditLog(audit_stream)
    )
    try:
        server = ProxyServer((host or "127.0.0.1", int(port_text)), proxy)
    except (OSError, ValueError) as e:
        print(f"error: cannot bind {listen}: {e}", file=sys.stderr)
        return 3

    import threading

    stop_event = threading.Event()

    def _shutdown(signum, frame):
        stop_event.set()

    signal.signal(signal.SIGTERM, _shutdown)
    signal.signal(signal.SIGINT, _shutdown)
    server.serve_background()
    print(f"proxy listening on {server.server_address[0]}:{server.port}", flush=True)
    try:
        while not stop_event.is_set():
            stop_event.wait(0.2)
    finally:
        server.shutdown()
        server.server_close()
        proxy.close()
        if audit_stream is not None:
            audit_stream.close()
    return 0


def main(argv=None) -> int:
    opts = _build_parser().parse_args(argv)
    if opts.command == "serve":
        return cmd_serve(opts)
    if opts.command == "lint":
        return cmd_lint(opts)
    if opts.command == "replay":
        return cmd_replay(opts)
    if opts.command == "mint-token":
        return cmd_mint_token(opts)
    if opts.command == "bench":
        return cmd_bench(opts)
    return 2


if __name__ == "__main__":
    raise SystemExit(main())
