"""Run the whole pipeline on the synthetic fixture and print the metrics.

    python3 scripts/run_fixture_pipeline.py --seed 0 --epochs 50
"""

import argparse
import time
import warnings

from msprop.fixture import synth_fixture
from msprop.pipeline import RunConfig, dataset_from_bundle, run_pipeline

FAST = dict(walk_length=20, walks_per_node=4, emb_dim=16, emb_epochs=1, d2=32, d3=64,
            batch_size=8, struct_lr=2e-3, prop_lr=0.01)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--dropout", type=float, default=0.5)
    ap.add_argument("--branch", default="MFO")
    args = ap.parse_args()

    warnings.simplefilter("ignore", UserWarning)
    t0 = time.perf_counter()
    ds = dataset_from_bundle(synth_fixture(seed=args.seed, branch=args.branch))
    cfg = RunConfig(**FAST, seed=args.seed, prop_epochs=args.epochs, dropout=args.dropout, branch=args.branch)
    r = run_pipeline(ds, cfg)
    for epoch, loss, vf in r.log_rows[:: max(1, len(r.log_rows) // 10)]:
        print(f"epoch {epoch:3d}  loss {loss:9.3f}  valid Fmax {vf:.4f}")
    print(f"train Fmax (model output) {r.train_fmax:.4f}")
    for k, v in r.metrics.items():
        print(f"test {k:6s} {v:.4f}")
    print(f"{time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
