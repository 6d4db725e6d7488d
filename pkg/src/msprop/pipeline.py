"""End-to-end orchestration on in-memory data.

The CLI wraps these steps with file I/O; tests and scripts call them
directly. Protein order is canonical (sorted ids) everywhere so results do
not depend on the order of records in the input files.
"""

from __future__ import annotations

import datetime as dt
import logging
import warnings
import zlib
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import ingest, metrics
from .contact import build_contact_map
from .fixture import FixtureBundle
from .ingest import FeatureTable
from .node2vec import EmbeddingConfig, WalkConfig, embed_graph, residue_features
from .numeric import ConfigError
from .ontology import BRANCHES, GoDag, LabelMatrix, branch_filter, compute_ic, parse_obo, true_path_closure
from .prediction import DEFAULT_PHI, fuse, label_propagate
from .propagation import AlignmentError, HeteroNetwork, PropConfig, PropagationModel, build_network, train_propagation
from .structure import StructConfig, StructExample, StructureModel, extract_hidden, mean_residue_features, struct_train

log = logging.getLogger(__name__)

TUNING_RANGES = {
    "dropout": (0.3, 0.7),
    "mlp_layers": (1, 4),
    "d3": (128, 1024),
}


@dataclass
class RunConfig:
    branch: str = "MFO"
    seed: int = 0
    # contact map / node2vec
    contact_threshold: float = 10.0
    p: float = 1.0
    q: float = 1.0
    walk_length: int = 40
    walks_per_node: int = 10
    greedy_walks: bool = False
    emb_dim: int = 64
    window: int = 5
    negatives: int = 5
    emb_epochs: int = 5
    emb_lr: float = 0.025
    # structural encoder
    d2: int = 512
    n_conv: int = 3
    n_modules: int = 2
    pool_rate: float = 0.75
    struct_dropout: float = 0.5
    struct_lr: float = 5e-4
    struct_epochs: int = 20
    batch_size: int = 32
    readout: str = "mean"
    # propagation model
    d3: int = 512
    mlp_layers: int = 1
    prop_layers: int = 2
    dropout: float = 0.5
    prop_lr: float = 1e-3
    prop_epochs: int = 10
    weighted_logits: bool = False
    reduction: str = "sum"
    # prediction
    phi: float = -1.0  # < 0 selects the branch default
    label_layers: int = 2
    report_threshold: float = 0.01
    # inputs
    ppi_min_score: float = 0.0
    homology_k: int = 3
    homology_threshold: float = 0.5
    seq_feature_dim: int = 1280  # only for the hashed k-mer fallback
    t1: str = "2021-01-01"
    t2: str = "2022-08-01"
    t3: str = "2023-08-31"
    # ablations
    no_struct: bool = False
    no_struct_model: bool = False
    no_propagation: bool = False
    no_label_prop: bool = False
    strict_ranges: bool = False

    def __post_init__(self):
        if self.branch not in BRANCHES:
            raise ConfigError(f"branch must be one of {BRANCHES}")
        if not 0.0 <= self.dropout < 1.0 or not 0.0 <= self.struct_dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if not 0.0 < self.pool_rate <= 1.0:
            raise ConfigError("pool_rate must lie in (0, 1]")
        if self.phi > 1.0:
            raise ConfigError("phi must lie in [0, 1]")
        for key in ("walk_length", "walks_per_node", "emb_dim", "window", "d2", "d3", "n_conv",
                    "n_modules", "batch_size", "mlp_layers", "seq_feature_dim", "homology_k"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be positive, got {getattr(self, key)}")
        for key in ("negatives", "emb_epochs", "struct_epochs", "prop_epochs", "prop_layers", "label_layers"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be non-negative, got {getattr(self, key)}")
        if min(self.p, self.q, self.emb_lr, self.struct_lr, self.prop_lr, self.contact_threshold) <= 0:
            raise ConfigError("p, q, learning rates and the contact threshold must be positive")
        if self.strict_ranges:
            for key, (lo, hi) in TUNING_RANGES.items():
                if not lo <= getattr(self, key) <= hi:
                    raise ConfigError(f"{key}={getattr(self, key)} outside [{lo}, {hi}]")

    @property
    def fusion_weight(self) -> float:
        if self.no_label_prop:
            return 1.0
        return DEFAULT_PHI[self.branch] if self.phi < 0 else self.phi

    def dates(self):
        return tuple(dt.date.fromisoformat(x) for x in (self.t1, self.t2, self.t3))

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for k, v in values.items():
            k = k.replace("-", "_")
            if k not in types:
                raise ConfigError(f"unknown config key {k!r}")
            kw[k] = _coerce(v, types[k])
        return cls(**kw)


def _coerce(v, typ):
    if not isinstance(v, str):
        return v
    if typ in ("bool", bool):
        if v.lower() in ("1", "true", "yes", "on"):
            return True
        if v.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {v!r}")
    if typ in ("int", int):
        return int(v)
    if typ in ("float", float):
        return float(v)
    return v


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def protein_seed(master: int, pid: str) -> int:
    """Per-protein seed independent of protein order."""
    return (master * 1_000_003 + zlib.crc32(pid.encode())) % (2**32)


# -- dataset -------------------------------------------------------------------

@dataclass
class Dataset:
    dag: GoDag
    sequences: dict  # id -> sequence
    coords: dict  # id -> CoordinateRecord
    ppi: ingest.PpiEdgeList
    homology: ingest.SimilarityEdgeList
    annotations: list
    seq_features: FeatureTable
    missing_structures: list = field(default_factory=list)


def dataset_from_bundle(bundle: FixtureBundle) -> Dataset:
    return Dataset(bundle.dag, {r.id: r.sequence for r in bundle.sequences}, dict(bundle.coords),
                   bundle.ppi, bundle.homology, list(bundle.annotations), bundle.features)


def load_dataset(root, cfg: RunConfig) -> Dataset:
    root = Path(root)
    dag = parse_obo((root / "go.obo").read_text())
    seqs = ingest.parse_fasta((root / "sequences.fasta").read_text())
    coords, missing = {}, []
    sdir = root / "structures"
    for r in seqs:
        path = next((p for p in (sdir / f"{r.id}.ca", sdir / f"{r.id}.pdb") if p.exists()), None)
        if path is None:
            missing.append(r.id)
            continue
        try:
            coords[r.id] = ingest.parse_coords(path.read_text(), r.id)
        except ValueError as exc:
            raise ingest.ParseError(f"{path}: {exc}") from None
    ppi = ingest.parse_ppi_tsv((root / "ppi.tsv").read_text(), cfg.ppi_min_score)
    hom_path = root / "homology.tsv"
    if hom_path.exists():
        homology = ingest.parse_similarity_tsv(hom_path.read_text())
    else:
        homology = ingest.build_homology_network(seqs, cfg.homology_k, cfg.homology_threshold)
    anns = ingest.parse_annotations((root / "annotations.tsv").read_text())
    feat_path = root / "features_se.hse"
    if feat_path.exists():
        feats = ingest.load_feature_table(feat_path.read_bytes())
    else:
        warnings.warn("no sequence feature table; using hashed k-mer features")
        feats = ingest.hashed_kmer_features(seqs, cfg.seq_feature_dim)
    return Dataset(dag, {r.id: r.sequence for r in seqs}, coords, ppi, homology, anns, feats, missing)


@dataclass
class BranchData:
    ids: list  # network node order (sorted)
    labels: LabelMatrix  # all ids x label columns, closed
    train: list
    valid: list
    test: list
    ic: object

    def mask(self, subset) -> np.ndarray:
        s = set(subset)
        return np.array([p in s for p in self.ids])


def prepare_branch(ds: Dataset, cfg: RunConfig) -> BranchData:
    dag = branch_filter(ds.dag, cfg.branch)
    anns = [a for a in ds.annotations if a.term in dag]
    unknown = sorted({a.term for a in ds.annotations if a.term not in ds.dag})
    if unknown:
        raise ConfigError(f"annotations reference unknown GO terms: {', '.join(unknown[:10])}")
    ids = sorted(ds.seq_features.ids)
    known = set(ids)
    split = ingest.temporal_split([a for a in anns if a.protein in known], *cfg.dates())
    full = true_path_closure(dag, [(a.protein, a.term) for a in anns if a.protein in known], proteins=ids)
    train_rows = full.rows(split.train)
    cols = [t for j, t in enumerate(full.terms) if train_rows[:, j].any()]
    if not cols:
        raise ConfigError(f"no training annotations in branch {cfg.branch}")
    labels = LabelMatrix(ids, cols, full.Y[:, [full.term_index[t] for t in cols]], cfg.branch)
    ic = compute_ic(labels.subset(split.train))
    return BranchData(ids, labels, split.train, split.valid, split.test, ic)


# -- feature extraction ----------------------------------------------------------

def residue_feature_maps(ds: Dataset, cfg: RunConfig) -> dict:
    """node2vec embedding || one-hot for every protein with a structure."""
    out = {}
    for pid in sorted(ds.coords):
        rec = ds.coords[pid]
        g = build_contact_map(rec, cfg.contact_threshold)
        seed = protein_seed(cfg.seed, pid)
        emb = embed_graph(
            g,
            WalkConfig(cfg.p, cfg.q, cfg.walk_length, cfg.walks_per_node, seed, cfg.greedy_walks),
            EmbeddingConfig(cfg.emb_dim, cfg.window, cfg.negatives, cfg.emb_epochs, cfg.emb_lr, seed),
        )
        out[pid] = (g, residue_features(emb, rec.letters))
    return out


def struct_examples(residue_maps: dict) -> dict:
    return {pid: StructExample(g.adjacency(), x) for pid, (g, x) in residue_maps.items()}


def struct_config(cfg: RunConfig, d_in: int) -> StructConfig:
    return StructConfig(d_in=d_in, hidden=cfg.d2, n_conv=cfg.n_conv, n_modules=cfg.n_modules,
                        pool_rate=cfg.pool_rate, dropout=cfg.struct_dropout, readout=cfg.readout,
                        lr=cfg.struct_lr, epochs=cfg.struct_epochs, batch_size=cfg.batch_size,
                        reduction=cfg.reduction, seed=cfg.seed)


def train_structure(examples: dict, bd: BranchData, cfg: RunConfig) -> StructureModel:
    train = [p for p in bd.train if p in examples]
    if not train:
        raise ConfigError("no training protein has a structure")
    d_in = next(iter(examples.values())).features.shape[1]
    scfg = struct_config(cfg, d_in)
    return struct_train([examples[p] for p in train], bd.labels.rows(train), scfg)


def structural_features(examples: dict, bd: BranchData, cfg: RunConfig, model=None) -> FeatureTable:
    if cfg.no_struct_model:
        width = next(iter(examples.values())).features.shape[1]
        return FeatureTable(list(bd.ids), mean_residue_features(examples, bd.ids, width))
    hst, _ = extract_hidden(model, examples, bd.ids)
    return FeatureTable(list(bd.ids), hst)


def concat_features(h_se: FeatureTable, h_st: FeatureTable | None, ids) -> np.ndarray:
    """Row-aligned ``H_se || H_st`` for ``ids``; ids are matched, never assumed."""
    missing = [p for p in ids if p not in h_se.index]
    if h_st is not None:
        missing += [p for p in ids if p not in h_st.index]
    if missing:
        raise AlignmentError(f"feature tables lack proteins: {', '.join(sorted(set(missing))[:10])}")
    parts = [h_se.rows(ids)]
    if h_st is not None:
        parts.append(h_st.rows(ids))
    return np.concatenate(parts, axis=1)


# -- training / prediction ---------------------------------------------------------

def prop_config(cfg: RunConfig, d_in: int) -> PropConfig:
    return PropConfig(d_in=d_in, hidden=cfg.d3, mlp_layers=cfg.mlp_layers, prop_layers=cfg.prop_layers,
                      dropout=cfg.dropout, weighted_logits=cfg.weighted_logits,
                      no_propagation=cfg.no_propagation, lr=cfg.prop_lr, epochs=cfg.prop_epochs,
                      reduction=cfg.reduction, seed=cfg.seed)


def network_for(ds: Dataset, ids) -> HeteroNetwork:
    return build_network(ids, ds.ppi, ds.homology)


def fmax_on(probs, truth, mask):
    truth = truth[mask]
    if not truth.any():
        return float("nan")
    return metrics.fmax(probs[mask], truth)[0]


def train_prop_model(net, H, bd: BranchData, cfg: RunConfig, **kw):
    pcfg = prop_config(cfg, H.shape[1])
    Y = bd.labels.Y
    return train_propagation(
        net, H, Y, bd.mask(bd.train), pcfg, valid_mask=bd.mask(bd.valid),
        eval_fn=lambda probs, m: fmax_on(probs, Y, m), **kw)


def predict_scores(model: PropagationModel, net, H, bd: BranchData, cfg: RunConfig):
    """Fused scores for every network node, plus the model-only output."""
    for pid in net.isolated():
        if pid in set(bd.test):
            warnings.warn(f"test protein {pid} has no network edges; self-loop attention only")
    y_out, A = model.predict(net, H)
    phi = cfg.fusion_weight
    if A is None or phi == 1.0:
        return fuse(y_out, y_out, 1.0), y_out
    clamp = bd.mask(bd.train)
    y_label = label_propagate(A[0], A[1], bd.labels.Y, clamp, cfg.label_layers)
    return fuse(y_out, y_label, phi), y_out


def evaluate_rows(scores, bd: BranchData, subset) -> dict:
    m = bd.mask(subset)
    return metrics.evaluate(scores[m], bd.labels.Y[m], bd.ic)


@dataclass
class PipelineResult:
    branch: BranchData
    scores: np.ndarray
    y_out: np.ndarray
    model: PropagationModel
    log_rows: list
    metrics: dict
    train_fmax: float
    features: np.ndarray = None
    network: HeteroNetwork = None


def run_pipeline(ds: Dataset, cfg: RunConfig, residue_maps=None, struct_model=None) -> PipelineResult:
    bd = prepare_branch(ds, cfg)
    h_st = None
    if not cfg.no_struct:
        residue_maps = residue_maps if residue_maps is not None else residue_feature_maps(ds, cfg)
        examples = struct_examples(residue_maps)
        if not cfg.no_struct_model and struct_model is None:
            struct_model = train_structure(examples, bd, cfg)
        h_st = structural_features(examples, bd, cfg, struct_model)
    H = concat_features(ds.seq_features, h_st, bd.ids)
    net = network_for(ds, bd.ids)
    model, _, rows = train_prop_model(net, H, bd, cfg)
    scores, y_out = predict_scores(model, net, H, bd, cfg)
    result_metrics = evaluate_rows(scores, bd, bd.test)
    train_fmax = fmax_on(y_out, bd.labels.Y, bd.mask(bd.train))
    return PipelineResult(bd, scores, y_out, model, rows, result_metrics, train_fmax, H, net)
