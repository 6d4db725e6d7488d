"""Acceptance criteria 1-9, one printed [PASS]/[FAIL] line each.

Under pytest the lines bypass capture; ``python3 tests/test_acceptance.py``
prints the same report without pytest.
"""

import dataclasses
import sys
import time
import warnings
from functools import lru_cache
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

from msprop import metrics
from msprop.fixture import synth_fixture
from msprop.node2vec import WalkConfig, search_bias, transition_probs
from msprop.ontology import true_path_closure
from msprop.pipeline import (
    Dataset, RunConfig, dataset_from_bundle, prepare_branch, residue_feature_maps, run_pipeline,
    struct_examples, train_structure,
)
from msprop.prediction import format_predictions, fuse, label_propagate
from msprop.propagation import compute_attention
from msprop.structure import StructureModel, pool_size, top_select

from _util import check_params
from test_node2vec import graph
from test_metrics import instance, oracle_aupr, oracle_fmax, oracle_smin
from test_ontology import random_dag, reachable
from test_propagation import small_model, toy_network
from test_structure import example, small_cfg

FAST = dict(walk_length=20, walks_per_node=4, emb_dim=16, emb_epochs=1, d2=32, d3=64,
            batch_size=8, struct_lr=2e-3, prop_lr=0.01, prop_epochs=50)


def report(n, ok, detail):
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}", flush=True)
    return ok


# -- 1: finite differences ---------------------------------------------------------------

def criterion_1():
    t0 = time.perf_counter()
    worst = {}

    def note(name, err):
        worst[name] = max(worst.get(name, 0.0), err)

    for seed in range(3):
        g = np.random.default_rng(seed)
        sm = StructureModel(small_cfg(seed=seed), n_labels=3)
        for k, p in sm.params.items():
            if k.endswith(".b"):
                p.value[...] = g.normal(size=p.value.shape) * 0.5
        batch = [example(g, int(g.integers(3, 9)), 5) for _ in range(2)]
        y = (g.random((2, 3)) < 0.5) * 1.0
        loss = lambda: sm.loss_and_grad(batch, y)
        for name, prefix in (("GCN", "conv"), ("pooling score", "score"), ("structure MLP", "mlp")):
            note(name, check_params(loss, sm.params, [k for k in sm.params if k.startswith(prefix)],
                                    max_coords=None, seed=seed))
        note("structure loss", check_params(loss, sm.params, max_coords=None, seed=seed))

        pm = small_model(seed, mlp_layers=2)
        net = toy_network(g, 8)
        H = g.normal(size=(8, 5))
        Y = (g.random((8, 3)) < 0.5) * 1.0
        mask = (g.random(8) < 0.7) * 1.0
        loss = lambda: pm.loss_and_grad(net, H, Y, mask)
        groups = (("input MLP + layer norm", ("W_e", "b_e", "mlp")), ("attention", ("W_t", "a")),
                  ("propagation layer", ("prop",)), ("output head", ("W_out", "b_out")))
        for name, prefixes in groups:
            note(name, check_params(loss, pm.params, [k for k in pm.params if k.startswith(prefixes)],
                                    max_coords=None, seed=seed))
        note("propagation loss", check_params(loss, pm.params, max_coords=None, seed=seed))
    secs = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-4 and secs < 60
    parts = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    return report(1, ok, f"max FD rel. error {max(worst.values()):.2e} <= 1e-4 ({parts}); {secs:.1f}s < 60s")


# -- 2: metric oracles -------------------------------------------------------------------

def criterion_2():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(100):
        pred, truth, ic = instance(seed)
        ones = np.ones(truth.shape[1])
        diffs = [
            metrics.fmax(pred, truth)[0] - oracle_fmax(pred, truth, ones),
            metrics.smin(pred, truth, ic)[0] - oracle_smin(pred, truth, ic),
            metrics.aupr(pred, truth) - oracle_aupr(pred, truth, ones),
        ]
        if (truth * ic).sum() > 0:
            diffs += [metrics.weighted_fmax(pred, truth, ic)[0] - oracle_fmax(pred, truth, ic),
                      metrics.weighted_aupr(pred, truth, ic) - oracle_aupr(pred, truth, ic)]
        worst = max(worst, *map(abs, diffs))
    secs = time.perf_counter() - t0
    return report(2, worst <= 1e-12 and secs < 60,
                  f"max |metric - oracle| {worst:.1e} <= 1e-12 over 100 seeds; {secs:.1f}s < 60s")


# -- 3: closure ------------------------------------------------------------------------------

def criterion_3():
    bad = 0
    for seed in range(20):
        g = np.random.default_rng(100 + seed)
        n = int(g.integers(5, 51))
        dag = random_dag(seed, n)
        anns = [(f"p{int(g.integers(6))}", f"t{int(g.integers(n))}") for _ in range(12)]
        lm = true_path_closure(dag, anns)
        expect = {}
        for p, t in anns:
            expect.setdefault(p, set()).update(reachable(dag, t))
        again = true_path_closure(dag, [(p, t) for p, ts in lm.label_sets().items() for t in ts])
        bad += lm.label_sets() != expect or not np.array_equal(again.Y, lm.Y)
    return report(3, bad == 0, f"{20 - bad}/20 random DAGs match reachability and are idempotent")


# -- 4: point checks --------------------------------------------------------------------------

def criterion_4():
    p, q = 2.0, 0.5
    biases = [search_bias(d, p, q) for d in (0, 1, 2)]
    # path 0-1-2 plus 0-3 and 1-3: after 0 -> 1, candidates are 0 (back), 2 (far), 3 (shared)
    cand, probs = transition_probs(graph(4, [(0, 1), (1, 2), (0, 3), (1, 3)]), 0, 1, WalkConfig(p, q))
    expect = np.array([1 / p, 1 / q, 1.0]) / (1 / p + 1 / q + 1)
    walk_ok = cand == [0, 2, 3] and np.allclose(probs, expect, rtol=0, atol=1e-15)
    kept = len(top_select(np.array([0.3, -0.1, 0.8, 0.2]), 0.75))
    a, b = np.array([[0.25, 0.75]]), np.array([[0.5, 0.125]])
    ends = np.array_equal(fuse(a, b, 1.0), a) and np.array_equal(fuse(a, b, 0.0), b)
    ok = biases == [1 / p, 1.0, 1 / q] and walk_ok and kept == 3 == pool_size(4, 0.75) and ends
    return report(4, ok, f"search bias {biases} = (1/p, 1, 1/q); kept {kept} of 4 at k=0.75; "
                         f"fusion endpoints exact: {ends}")


# -- 5: attention and clamping ------------------------------------------------------------------

def criterion_5():
    worst, clamp_ok = 0.0, True
    for seed in range(50):
        g = np.random.default_rng(seed)
        n = int(g.integers(2, 9))
        net = toy_network(g, n)
        H = g.normal(size=(n, 4))
        mats = []
        for rel in (net.ppi, net.homology):
            alpha, _ = compute_attention(rel, H, g.normal(size=(4, 4)), g.normal(size=8))
            A = rel.matrix(alpha)
            sums = np.asarray(A.sum(axis=1)).ravel()
            support = np.diff(A.indptr) > 0
            worst = max(worst, np.max(np.abs(sums[support] - 1.0)))
            mats.append(A)
        Y = (g.random((n, 3)) < 0.5) * 1.0
        clamp = g.random(n) < 0.5
        for layers in range(1, 4):
            out = label_propagate(mats[0], mats[1], Y, clamp, layers)
            clamp_ok &= bool(np.array_equal(out[clamp], Y[clamp]))
    return report(5, worst <= 1e-9 and clamp_ok,
                  f"max |row sum - 1| {worst:.1e} <= 1e-9; clamped rows equal Y after every layer: {clamp_ok}")


# -- pipeline-level criteria ------------------------------------------------------------------------

@lru_cache(maxsize=None)
def fixture_dataset(seed=0) -> Dataset:
    return dataset_from_bundle(synth_fixture(seed=seed))


@lru_cache(maxsize=None)
def fast_run(seed=0, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return run_pipeline(fixture_dataset(seed), RunConfig(**{**FAST, "seed": seed, **kw}))


def test_tsv(result):
    bd = result.branch
    rows = bd.mask(bd.test)
    return format_predictions([p for p, k in zip(bd.ids, rows) if k], bd.labels.terms, result.scores[rows])


test_tsv.__test__ = False


def criterion_6():
    # capacity check: regularisation off, same fixture and epoch budget
    t0 = time.perf_counter()
    ds = dataset_from_bundle(synth_fixture(seed=0))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        r = run_pipeline(ds, RunConfig(**{**FAST, "dropout": 0.0}))
    secs = time.perf_counter() - t0
    epochs = len(r.log_rows)
    ok = r.train_fmax >= 0.95 and epochs <= 50 and secs < 600
    return report(6, ok, f"training Fmax {r.train_fmax:.4f} >= 0.95 after {epochs} epochs "
                         f"(dropout 0); full pipeline {secs:.0f}s < 600s")


ABLATIONS = {"full": {}, "no label propagation": dict(no_label_prop=True),
             "no structural features": dict(no_struct=True),
             "no structural model": dict(no_struct_model=True),
             "no propagation layer": dict(no_propagation=True)}


def criterion_7(seeds=range(5)):
    scores = {k: [] for k in ABLATIONS}
    for seed in seeds:
        ds = fixture_dataset(seed)
        cfg = RunConfig(**{**FAST, "seed": seed})
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            maps = residue_feature_maps(ds, cfg)
            sm = train_structure(struct_examples(maps), prepare_branch(ds, cfg), cfg)
            for name, kw in ABLATIONS.items():
                r = run_pipeline(ds, dataclasses.replace(cfg, **kw), residue_maps=maps, struct_model=sm)
                scores[name].append(r.metrics["Fmax"])
    m = {k: float(np.mean(v)) for k, v in scores.items()}
    full, nolp, nost, nosm, noprop = m.values()
    margins = (full - nolp, nolp - nost, min(nolp, nost, nosm) - noprop)
    ok = all(x >= 0.01 for x in margins)
    means = ", ".join(f"{k} {v:.3f}" for k, v in m.items())
    return report(7, ok, f"mean test Fmax over {len(scores['full'])} seeds: {means}; margins "
                         f"{margins[0]:.3f}, {margins[1]:.3f}, {margins[2]:.3f} (each >= 0.01)")


def criterion_8():
    a = test_tsv(fast_run(0))
    fresh = dataset_from_bundle(synth_fixture(seed=0))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        b = test_tsv(run_pipeline(fresh, RunConfig(**{**FAST, "seed": 0})))
    same = a.encode() == b.encode()
    return report(8, same and len(a) > 0, f"two runs, same config and seed: prediction TSVs byte-identical: {same} "
                                          f"({len(a.splitlines())} lines)")


def criterion_9():
    base = fast_run(0)
    bd = base.branch
    test_rows = bd.mask(bd.test)
    f0 = metrics.fmax(base.scores[test_rows], bd.labels.Y[test_rows])[0]
    distinct = len(np.unique(base.scores[test_rows])) == base.scores[test_rows].size

    # relabel node order with the trained model held fixed
    perm = np.random.default_rng(1).permutation(len(bd.ids))
    net = base.network.permuted(perm)
    y_out, A = base.model.predict(net, base.features[perm])
    Y = bd.labels.Y[perm]
    clamp = bd.mask(bd.train)[perm]
    cfg = RunConfig(**FAST)
    scores = fuse(y_out, label_propagate(A[0], A[1], Y, clamp, cfg.label_layers), cfg.fusion_weight)
    tp = test_rows[perm]
    f_perm = metrics.fmax(scores[tp], Y[tp])[0]

    # shuffle every input record order and rerun from scratch
    ds = fixture_dataset(0)
    g = np.random.default_rng(2)
    shuffled = Dataset(
        ds.dag, dict(sorted(ds.sequences.items(), key=lambda _: g.random())),
        dict(sorted(ds.coords.items(), key=lambda _: g.random())),
        type(ds.ppi)(dict(sorted(ds.ppi.weights.items(), key=lambda _: g.random()))),
        type(ds.homology)(dict(sorted(ds.homology.weights.items(), key=lambda _: g.random()))),
        [ds.annotations[i] for i in g.permutation(len(ds.annotations))],
        _permute_table(ds.seq_features, g),
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        f_shuf = run_pipeline(shuffled, RunConfig(**{**FAST, "seed": 0})).metrics["Fmax"]
    delta = max(abs(f_perm - f0), abs(f_shuf - f0))
    return report(9, delta <= 1e-9 and distinct,
                  f"|dFmax| {delta:.1e} <= 1e-9 under node relabeling and input shuffling "
                  f"(test scores distinct: {distinct})")


def _permute_table(table, g):
    from msprop.ingest import FeatureTable

    order = g.permutation(len(table.ids))
    return FeatureTable([table.ids[i] for i in order], table.values[order])


# -- pytest entry points ------------------------------------------------------------------------

CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9]


def _run(capsys, fn):
    with capsys.disabled():
        print()
        ok = fn()
    assert ok


def test_criterion_1(capsys):
    _run(capsys, criterion_1)


def test_criterion_2(capsys):
    _run(capsys, criterion_2)


def test_criterion_3(capsys):
    _run(capsys, criterion_3)


def test_criterion_4(capsys):
    _run(capsys, criterion_4)


def test_criterion_5(capsys):
    _run(capsys, criterion_5)


def test_criterion_6(capsys):
    _run(capsys, criterion_6)


def test_criterion_7(capsys):
    _run(capsys, criterion_7)


def test_criterion_8(capsys):
    _run(capsys, criterion_8)


def test_criterion_9(capsys):
    _run(capsys, criterion_9)


if __name__ == "__main__":
    results = [fn() for fn in CRITERIA]
    print(f"{sum(results)}/{len(results)} criteria pass")
    sys.exit(0 if all(results) else 1)
