"""Access to the data files shipped inside the package: the manifest
variants (gold / careful / naive, plus their scalar-label sidecars), the
replay corpus, and the unknown-tool corpus."""

from __future__ import annotations

import json
from importlib import resources as _res
from pathlib import Path

from .manifest import ManifestSet, parse_manifest
from .replay import Corpus, ManifestVariant, load_corpus

__all__ = [
    "data_path",
    "bundled_manifest",
    "bundled_variant",
    "bundled_corpus",
    "bundled_unknown_tools",
    "MANIFEST_VARIANTS",
]

MANIFEST_VARIANTS = ("gold", "careful", "naive")


def data_path(*parts: str) -> Path:
    base = _res.files("chaincaps").joinpath("data")
    return Path(str(base.joinpath(*parts)))


def bundled_manifest(name: str) -> ManifestSet:
    path = data_path("manifests", f"{name}.json")
    return parse_manifest(path.read_text(encoding="utf-8"))


def bundled_variant(name: str) -> ManifestVariant:
    manifest = bundled_manifest(name)
    sidecar = json.loads(
        data_path("manifests", f"{name}.labels.json").read_text(encoding="utf-8")
    )
    return ManifestVariant(
        name=name,
        manifest=manifest,
        source_labels=sidecar.get("source_labels", {}),
        sink_clearances=sidecar.get("sink_clearances", {}),
        default_label=int(sidecar.get("default_label", 2)),
    )


def bundled_corpus() -> Corpus:
    return load_corpus(data_path("corpus", "index.json"))


def bundled_unknown_tools() -> list[dict]:
    return json.loads(
        data_path("unknown_tools.json").read_text(encoding="utf-8")
    )["tools"]
