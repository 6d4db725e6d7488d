"""Test Fmax of the full model and the four ablations, averaged over seeds.

    python3 scripts/ablation_sweep.py --seeds 5 --csv ablation.csv
"""

import argparse
import csv
import dataclasses
import sys
import warnings

import numpy as np

from msprop.fixture import synth_fixture
from msprop.pipeline import (
    RunConfig, dataset_from_bundle, prepare_branch, residue_feature_maps, run_pipeline,
    struct_examples, train_structure,
)

FAST = dict(walk_length=20, walks_per_node=4, emb_dim=16, emb_epochs=1, d2=32, d3=64,
            batch_size=8, struct_lr=2e-3, prop_lr=0.01, prop_epochs=50)
VARIANTS = {"full": {}, "no_label_prop": dict(no_label_prop=True), "no_struct": dict(no_struct=True),
            "no_struct_model": dict(no_struct_model=True), "no_propagation": dict(no_propagation=True)}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--metric", default="Fmax", choices=["Fmax", "Smin", "AUPR", "wFmax", "wAUPR"])
    ap.add_argument("--csv", help="also write per-seed rows here")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a run setting")
    args = ap.parse_args()

    warnings.simplefilter("ignore", UserWarning)
    overrides = dict(kv.split("=", 1) for kv in args.set)
    rows = []
    for seed in range(args.seeds):
        ds = dataset_from_bundle(synth_fixture(seed=seed))
        cfg = RunConfig.from_mapping({**FAST, **overrides, "seed": seed})
        maps = residue_feature_maps(ds, cfg)
        sm = train_structure(struct_examples(maps), prepare_branch(ds, cfg), cfg)
        row = {"seed": seed}
        for name, kw in VARIANTS.items():
            r = run_pipeline(ds, dataclasses.replace(cfg, **kw), residue_maps=maps, struct_model=sm)
            row[name] = r.metrics[args.metric]
        rows.append(row)
        print(" ".join(f"{k}={v:.4f}" if k != "seed" else f"seed={v}" for k, v in row.items()), flush=True)

    means = {k: float(np.mean([r[k] for r in rows])) for k in VARIANTS}
    print("mean " + " ".join(f"{k}={v:.4f}" for k, v in means.items()))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, ["seed", *VARIANTS])
            w.writeheader()
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
