"""Run the toy8 campaign and the two loss diagnostics.

    python3 scripts/run_toy8.py [--out results] [--workers N]

Writes results/toy8.csv and results/toy8.md, then prints a markdown table of
the campaign followed by the CE-conflict and gradient-vanishing readouts on
the clean test logits.
"""

import argparse
import os
from pathlib import Path

import numpy as np

from superclass_attack.diffmodel import forward, load_weights
from superclass_attack.harness import ce_conflict, gradient_vanishing, load_dataset, report_csv, run_experiment, to_markdown
from superclass_attack.taxonomy import read_taxonomy

ROOT = Path(__file__).resolve().parents[1]
TOY8 = ROOT / "fixtures" / "toy8"


def diagnostics():
    model = load_weights(TOY8 / "model.samw")
    ds = load_dataset(TOY8 / "test.sads")
    tax = read_taxonomy(TOY8 / "taxonomy.json")
    logits = forward(model, ds.features)

    pulls = [e for l, y in zip(logits, ds.labels) for e in ce_conflict(l, int(y), tax)]
    # a positive net means the ascent direction raises that member's logit
    flipped = np.mean([e["net"] > 0 for e in pulls])
    print(f"sum(ce) on clean toy8: sibling terms outweigh the own term on {flipped:.1%} of superclass members")

    reports = [gradient_vanishing(l, int(y), tax) for l, y in zip(logits, ds.labels)]
    margin = np.array([r["superclass_sum_margin"] for r in reports])
    g_logit = np.array([r["logit_ce_grad_norm"] for r in reports])
    g_prob = np.array([r["prob_ce_grad_norm"] for r in reports])
    print(f"median superclass-sum margin {np.median(margin):.2f}; median |grad| logit-ce {np.median(g_logit):.2e}, "
          f"prob-ce {np.median(g_prob):.2e}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(ROOT / "results"))
    ap.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = run_experiment(TOY8 / "manifest.json", out / "toy8.csv", workers=args.workers)
    table = to_markdown(report_csv(report))
    (out / "toy8.md").write_text(table + "\n")
    print(table)
    print()
    diagnostics()


if __name__ == "__main__":
    main()
