#!/usr/bin/env python3
"""The replay study on the bundled corpus.

Replays 70 recorded traces (52 attacks across nine categories, 18 benign
workflows) through three decision pipelines and three manifest variants,
then ablates the budget pipeline one component at a time. The structure to
notice: the budget pipeline with expert manifests blocks everything while
completing every benign workflow; scalar labels and per-function isolation
each leave a characteristic class of attacks through; and manifest quality,
not the mechanism, is the dominant variable.
"""

from chaincaps.enforcement import ABLATION_TOGGLES
from chaincaps.replay import DEFENSES, run_suite
from chaincaps.resources import bundled_corpus, bundled_variant

corpus = bundled_corpus()
variants = [bundled_variant(n) for n in ("gold", "careful", "naive")]

print(f"corpus: {len(corpus.attacks)} attacks, {len(corpus.benign)} benign")
print()

report = run_suite(list(DEFENSES), variants, corpus, ablation_toggles=ABLATION_TOGGLES)
print(report.to_text())

gold = report.cell("chaincaps", "gold")
print("per-category blocking (chaincaps, gold):")
for cat, c in sorted(gold["categories"].items()):
    print(f"  {cat:<24} {c['blocked']}/{c['total']}")

print()
print("traces blocked by the budget pipeline but by neither baseline:")
names = [t.trace_id for t in corpus.attacks if t.tags.get("neither_baseline")]
print(f"  {len(names)} traces, e.g. {', '.join(names[:6])}, ...")
