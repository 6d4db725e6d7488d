"""Command-line driver.

Every step reads the dataset directory (``--data``) and writes into a work
directory (``--work``)::

    contacts/<id>.edges  contacts/missing.txt     (contact)
    embeddings/<id>.emb                            (embed)
    <BRANCH>/struct.smp                            (train-struct)
    <BRANCH>/h_st.hse                              (extract)
    <BRANCH>/prop.prp  <BRANCH>/train_log.csv      (train-prop)
    <BRANCH>/predictions.tsv                       (predict)
    <BRANCH>/metrics.tsv  <BRANCH>/pr_curve.csv    (eval)

``run`` chains all of them. Settings come from ``--config`` (flat
``key = value``), then ``--set key=value``, then dedicated flags; later
sources win.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import warnings
from pathlib import Path

from . import ingest, metrics, pipeline
from .contact import build_contact_map, read_edge_list, write_edge_list
from .fixture import FixtureParams, synth_fixture, write_bundle
from .node2vec import EmbeddingConfig, WalkConfig, embed_graph, read_embeddings, residue_features, write_embeddings
from .numeric import ConfigError
from .ontology import BRANCHES
from .prediction import format_predictions, parse_predictions
from .propagation import PropagationModel, TrainingError as PropTrainingError
from .serialize import CheckpointError, atomic_write
from .structure import StructureModel, TrainingError as StructTrainingError

log = logging.getLogger("msprop")

ABLATIONS = ("no_struct", "no_struct_model", "no_propagation", "no_label_prop")

class CliError(RuntimeError):
    pass

# -- configuration -------------------------------------------------------------

def build_config(args, branch: str | None = None) -> pipeline.RunConfig:
    values = {}
    if args.config:
        values.update(pipeline.parse_config_text(Path(args.config).read_text()))
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    if args.seed is not None:
        values["seed"] = args.seed
    for name in ABLATIONS + ("weighted_logits",):
        if getattr(args, name, False):
            values[name] = True
    values["branch"] = branch or args.branch or values.get("branch", "MFO")
    return pipeline.RunConfig.from_mapping(values)

def branches_for(args) -> list:
    return list(BRANCHES) if args.all_branches else [None]

# -- shared loading ------------------------------------------------------------

def _dataset(args, cfg):
    return pipeline.load_dataset(args.data, cfg)

def _branch_dir(args, cfg) -> Path:
    return Path(args.work) / cfg.branch

def _residue_maps(args, ds) -> dict:
    """Contact graphs and residue features from the contact and embed outputs."""
    work = Path(args.work)
    out = {}
    for pid in sorted(ds.coords):
        epath = work / "contacts" / f"{pid}.edges"
        vpath = work / "embeddings" / f"{pid}.emb"
        for p, step in ((epath, "contact"), (vpath, "embed")):
            if not p.exists():
                raise CliError(f"{p} missing; run '{step}' first")
        g = read_edge_list(epath.read_text())
        emb = read_embeddings(vpath.read_text())
        out[pid] = (g, residue_features(emb, g.letters))
    return out

def _features(args, cfg, ds, bd):
    h_st = None
    if not cfg.no_struct:
        path = _branch_dir(args, cfg) / "h_st.hse"
        if not path.exists():
            raise CliError(f"{path} missing; run 'extract' first")
        h_st = ingest.load_feature_table(path.read_bytes())
    return pipeline.concat_features(ds.seq_features, h_st, bd.ids)

def _load_prop(args, cfg):
    path = _branch_dir(args, cfg) / "prop.prp"
    if not path.exists():
        raise CliError(f"{path} missing; run 'train-prop' first")
    return PropagationModel.from_bytes(path.read_bytes())

# -- subcommands -------------------------------------------------------------------

def cmd_fixture(args):
    params = FixtureParams(seed=args.seed or 0, species=args.species, per_species=args.per_species,
                           labels=args.labels, branch=args.branch or "MFO")
    write_bundle(synth_fixture(params), args.out)
    print(f"fixture written to {args.out}")

def cmd_contact(args, cfg):
    ds = _dataset(args, cfg)
    cdir = Path(args.work) / "contacts"
    for pid in sorted(ds.coords):
        g = build_contact_map(ds.coords[pid], cfg.contact_threshold)
        atomic_write(cdir / f"{pid}.edges", write_edge_list(g))
    atomic_write(cdir / "missing.txt", "".join(f"{p}\n" for p in sorted(ds.missing_structures)))
    if ds.missing_structures:
        warnings.warn(f"{len(ds.missing_structures)} proteins lack structures; they get zero H_st rows")
    print(f"{len(ds.coords)} contact graphs written")

def cmd_embed(args, cfg):
    cdir = Path(args.work) / "contacts"
    paths = sorted(cdir.glob("*.edges"))
    if not paths:
        raise CliError(f"no contact graphs under {cdir}; run 'contact' first")
    for path in paths:
        pid = path.stem
        g = read_edge_list(path.read_text())
        seed = pipeline.protein_seed(cfg.seed, pid)
        emb = embed_graph(
            g,
            WalkConfig(cfg.p, cfg.q, cfg.walk_length, cfg.walks_per_node, seed, cfg.greedy_walks),
            EmbeddingConfig(cfg.emb_dim, cfg.window, cfg.negatives, cfg.emb_epochs, cfg.emb_lr, seed),
        )
        atomic_write(Path(args.work) / "embeddings" / f"{pid}.emb", write_embeddings(emb))
    print(f"{len(paths)} embeddings written")

def cmd_train_struct(args, cfg):
    ds = _dataset(args, cfg)
    bd = pipeline.prepare_branch(ds, cfg)
    examples = pipeline.struct_examples(_residue_maps(args, ds))
    model = pipeline.train_structure(examples, bd, cfg)
    meta = {"branch": cfg.branch, "terms": bd.labels.terms, "history": model.history}
    atomic_write(_branch_dir(args, cfg) / "struct.smp", model.to_bytes(meta))
    print(f"structural model trained; final epoch loss {model.history[-1] if model.history else float('nan'):.4f}")

def cmd_extract(args, cfg):
    ds = _dataset(args, cfg)
    bd = pipeline.prepare_branch(ds, cfg)
    examples = pipeline.struct_examples(_residue_maps(args, ds))
    model = None
    if not cfg.no_struct_model:
        path = _branch_dir(args, cfg) / "struct.smp"
        if not path.exists():
            raise CliError(f"{path} missing; run 'train-struct' first")
        model = StructureModel.from_bytes(path.read_bytes())
    table = pipeline.structural_features(examples, bd, cfg, model)
    atomic_write(_branch_dir(args, cfg) / "h_st.hse", ingest.dump_feature_table(table))
    print(f"H_st {table.values.shape[0]} x {table.dim} written")

def _log_csv(rows) -> str:
    return "".join(f"{e},{l:.10g},{v:.10g}\n" for e, l, v in rows)

def cmd_train_prop(args, cfg):
    ds = _dataset(args, cfg)
    bd = pipeline.prepare_branch(ds, cfg)
    H = _features(args, cfg, ds, bd)
    net = pipeline.network_for(ds, bd.ids)
    bdir = _branch_dir(args, cfg)
    model = state = None
    start = 0
    header = "epoch,loss,valid_fmax\n"
    previous = header
    if args.resume:
        model, state = _load_prop(args, cfg)
        start = int(model.meta.get("epochs_done", 0))
        model.cfg = dataclasses.replace(model.cfg, epochs=cfg.prop_epochs)
        log_path = bdir / "train_log.csv"
        if log_path.exists():
            kept = [l for l in log_path.read_text().splitlines()[1:] if l and int(l.split(",")[0]) < start]
            previous = header + "".join(l + "\n" for l in kept)
    meta = {"branch": cfg.branch, "terms": bd.labels.terms}
    try:
        model, state, rows = pipeline.train_prop_model(net, H, bd, cfg, model=model, state=state, start_epoch=start)
    except PropTrainingError as exc:
        if exc.last_good is not None:
            atomic_write(bdir / "prop.prp", exc.last_good)
        raise
    meta["epochs_done"] = max(cfg.prop_epochs, start)
    atomic_write(bdir / "prop.prp", model.to_bytes(state, meta))
    atomic_write(bdir / "train_log.csv", previous + _log_csv(rows))
    if rows:
        print(f"epoch {rows[-1][0]} loss {rows[-1][1]:.4f} valid Fmax {rows[-1][2]:.4f}")

def _subset(bd, name):
    return {"test": bd.test, "valid": bd.valid, "train": bd.train, "all": bd.ids}[name]

def cmd_predict(args, cfg):
    ds = _dataset(args, cfg)
    bd = pipeline.prepare_branch(ds, cfg)
    H = _features(args, cfg, ds, bd)
    net = pipeline.network_for(ds, bd.ids)
    model, _ = _load_prop(args, cfg)
    if model.meta.get("terms") != bd.labels.terms:
        raise CliError("checkpoint label columns do not match the dataset")
    scores, _ = pipeline.predict_scores(model, net, H, bd, cfg)
    rows = bd.mask(_subset(bd, args.subset))
    ids = [p for p, keep in zip(bd.ids, rows) if keep]
    text = format_predictions(ids, bd.labels.terms, scores[rows], cfg.report_threshold)
    atomic_write(_branch_dir(args, cfg) / "predictions.tsv", text)
    print(f"{len(ids)} proteins scored")

def cmd_eval(args, cfg):
    ds = _dataset(args, cfg)
    bd = pipeline.prepare_branch(ds, cfg)
    bdir = _branch_dir(args, cfg)
    pred_path = Path(args.predictions) if args.predictions else bdir / "predictions.tsv"
    if not pred_path.exists():
        raise CliError(f"{pred_path} missing; run 'predict' first")
    subset = _subset(bd, args.subset)
    if not subset:
        raise CliError(f"the {args.subset} split is empty")
    scores = parse_predictions(pred_path.read_text(), subset, bd.labels.terms)
    truth = bd.labels.rows(subset)
    result = metrics.evaluate(scores, truth, bd.ic)
    lines = ["metric\tbranch\tvalue"] + [f"{k}\t{cfg.branch}\t{v:.6f}" for k, v in result.items()]
    atomic_write(bdir / "metrics.tsv", "\n".join(lines) + "\n")
    atomic_write(bdir / "pr_curve.csv", metrics.pr_curve_csv(metrics.pr_curve(scores, truth)))
    print("\n".join(lines[1:]))

def cmd_run(args, cfg):
    steps = []
    if not cfg.no_struct:
        steps = [cmd_contact, cmd_embed] + ([] if cfg.no_struct_model else [cmd_train_struct]) + [cmd_extract]
    for step in steps + [cmd_train_prop, cmd_predict, cmd_eval]:
        step(args, cfg)

COMMANDS = {
    "contact": cmd_contact,
    "embed": cmd_embed,
    "train-struct": cmd_train_struct,
    "extract": cmd_extract,
    "train-prop": cmd_train_prop,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "run": cmd_run,
}

# -- argument parsing ------------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msprop", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    fx = sub.add_parser("fixture", help="write the synthetic dataset")
    fx.add_argument("--out", required=True)
    fx.add_argument("--seed", type=int, default=0)
    fx.add_argument("--branch", choices=BRANCHES, default="MFO")
    fx.add_argument("--species", type=int, default=2)
    fx.add_argument("--per-species", type=int, default=100)
    fx.add_argument("--labels", type=int, default=16)

    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--data", required=True, help="dataset directory")
        p.add_argument("--work", required=True, help="work/output directory")
        p.add_argument("--config", help="key = value settings file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE")
        p.add_argument("--seed", type=int)
        p.add_argument("--branch", choices=BRANCHES)
        p.add_argument("--all-branches", action="store_true")
        p.add_argument("--weighted-logits", action="store_true")
        for flag in ABLATIONS:
            p.add_argument("--" + flag.replace("_", "-"), dest=flag, action="store_true")
        if name in ("train-prop", "run"):
            p.add_argument("--resume", action="store_true", help="continue from prop.prp")
        if name in ("predict", "eval", "run"):
            p.add_argument("--subset", choices=("test", "valid", "train", "all"), default="test")
        if name in ("eval", "run"):
            p.add_argument("--predictions", help="prediction TSV (default: the work directory's)")
    return parser

def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "fixture":
            cmd_fixture(args)
            return 0
        if args.command == "run":
            args.resume = getattr(args, "resume", False)
        for branch in branches_for(args):
            cfg = build_config(args, branch)
            COMMANDS[args.command](args, cfg)
    except (CliError, ConfigError, ValueError, OSError, CheckpointError,
            PropTrainingError, StructTrainingError) as exc:
        print(f"msprop {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0

if __name__ == "__main__":
    sys.exit(main())
