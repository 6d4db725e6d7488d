"""Deterministic synthetic multi-species dataset.

Planted structure:

* a small single-branch GO DAG: root, one term per *family*, and specific
  terms below each family term (some with two parents);
* every protein belongs to a family and, within it, a *module*; a module
  fixes a set of specific terms, so labels are family terms + module terms
  (closed over the DAG), plus occasional private noise terms;
* residue composition is family-biased (visible to the structural encoder),
  while the precomputed sequence features carry only weak family/module
  signal under heavy noise;
* PPI edges are dense within a module of one species and sparse elsewhere;
  homology edges join ortholog pairs (protein i of species 0 with protein i
  of every other species), which share family and module;
* a fraction of "orphan" proteins get only random PPI edges and no
  ortholog edge, so their function is visible through features alone;
* earliest annotation dates put roughly 60/20/20 % of proteins into the
  train/valid/test windows.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import ingest
from .ingest import Annotation, CoordinateRecord, FeatureTable, SequenceRecord
from .ontology import GoDag, GoTerm, write_obo
from .serialize import atomic_write

ROOT = {"MFO": "GO:0003674", "BPO": "GO:0008150", "CCO": "GO:0005575"}
CANONICAL = "ACDEFGHIKLMNPQRSTVWY"
SPLIT_DATES = (dt.date(2021, 1, 1), dt.date(2022, 8, 1), dt.date(2023, 8, 31))


@dataclass
class FixtureParams:
    seed: int = 0
    species: int = 2
    per_species: int = 100
    labels: int = 16
    families: int = 4
    modules_per_family: int = 3
    branch: str = "MFO"
    min_len: int = 24
    max_len: int = 40
    enriched_frac: float = 0.5  # share of residues drawn from the family's letters
    d1: int = 32
    family_signal: float = 0.1
    module_signal: float = 0.15
    p_module: float = 0.35  # PPI edge prob, same module, same species
    p_family: float = 0.04
    p_background: float = 0.01
    p_homology_noise: float = 0.005
    orphan_frac: float = 0.25  # proteins whose edges ignore family and module
    p_orphan: float = 0.03
    divergence: float = 0.2  # chance an ortholog gains a private label
    split_fracs: tuple = (0.6, 0.2, 0.2)


@dataclass
class FixtureBundle:
    params: FixtureParams
    dag: GoDag
    sequences: list
    coords: dict
    ppi: ingest.PpiEdgeList
    homology: ingest.SimilarityEdgeList
    annotations: list
    features: FeatureTable
    manifest: dict = field(default_factory=dict)


def _term(k):
    return f"GO:{9000000 + k:07d}"


def _make_dag(rng, P):
    root = ROOT[P.branch]
    fams = [_term(1 + f) for f in range(P.families)]
    n_specific = P.labels - 1 - P.families
    if n_specific < P.families:
        raise ValueError("too few labels for the requested families")
    parents = {root: [], **{f: [root] for f in fams}}
    by_family = [[] for _ in fams]
    for k in range(n_specific):
        f = k % P.families
        tid = _term(100 + k)
        earlier = by_family[f]
        p1 = fams[f] if not earlier or rng.random() < 0.5 else earlier[rng.integers(len(earlier))]
        ps = [p1]
        if earlier and rng.random() < 0.3:
            p2 = earlier[rng.integers(len(earlier))]
            if p2 != p1:
                ps.append(p2)
        parents[tid] = ps
        by_family[f].append(tid)
    terms = {t: GoTerm(t, P.branch, tuple((p, "is_a") for p in ps), name=f"synthetic {t}")
             for t, ps in parents.items()}
    return GoDag(terms), fams, by_family


def _chain_coords(rng, n):
    """Compact C-alpha trace: persistent random walk with 3.8 A steps, pulled to its centroid."""
    steps = np.zeros((n, 3))
    d = rng.normal(size=3)
    for i in range(1, n):
        d = 0.6 * d / np.linalg.norm(d) + rng.normal(size=3) * 0.8
        steps[i] = 3.8 * d / np.linalg.norm(d)
    xyz = np.cumsum(steps, axis=0)
    c = xyz.mean(axis=0)
    xyz = c + (xyz - c) * 0.75
    return np.round(xyz, 3)


def synth_fixture(params: FixtureParams | None = None, **overrides) -> FixtureBundle:
    P = params or FixtureParams()
    if overrides:
        P = FixtureParams(**{**asdict(P), **overrides})
    rng = np.random.default_rng(P.seed)
    dag, fams, by_family = _make_dag(rng, P)

    letters = rng.permutation(list(CANONICAL))
    fam_letters = [letters[3 * f % 20: 3 * f % 20 + 3] for f in range(P.families)]

    modules = []  # (family, planted specific terms)
    for f in range(P.families):
        spec = by_family[f]
        for m in range(P.modules_per_family):
            terms = {spec[m % len(spec)]}
            if len(spec) > 1 and rng.random() < 0.5:
                terms.add(spec[rng.integers(len(spec))])
            modules.append((f, sorted(terms)))

    n = P.per_species
    module_of = rng.integers(len(modules), size=n)  # shared by all orthologs of index i
    fam_centroids = rng.normal(size=(P.families, P.d1))
    mod_centroids = rng.normal(size=(len(modules), P.d1))

    ids, fam_of, mod_of, planted = [], {}, {}, {}
    sequences, coords, feats = [], {}, []
    for s in range(P.species):
        for i in range(n):
            pid = f"S{s}P{i:03d}"
            ids.append(pid)
            m = int(module_of[i])
            f = modules[m][0]
            fam_of[pid], mod_of[pid] = f, m
            terms = set(modules[m][1]) | {fams[f]}
            if s > 0 and rng.random() < P.divergence:
                terms.add(by_family[f][rng.integers(len(by_family[f]))])
            planted[pid] = sorted(terms)
            L = int(rng.integers(P.min_len, P.max_len + 1))
            enriched = rng.random(L) < P.enriched_frac
            seq = np.where(enriched, rng.choice(fam_letters[f], size=L), rng.choice(list(CANONICAL), size=L))
            seq = "".join(seq)
            sequences.append(SequenceRecord(pid, seq))
            coords[pid] = CoordinateRecord(pid, np.arange(1, L + 1), seq, _chain_coords(rng, L))
            feats.append(P.family_signal * fam_centroids[f] + P.module_signal * mod_centroids[m]
                         + rng.normal(size=P.d1))

    orphan = {pid: bool(rng.random() < P.orphan_frac) for pid in ids}
    ppi = ingest.PpiEdgeList()
    for s in range(P.species):
        for i in range(n):
            for j in range(i + 1, n):
                a, b = f"S{s}P{i:03d}", f"S{s}P{j:03d}"
                if orphan[a] or orphan[b]:
                    p, lo, hi = P.p_orphan, 150, 1000
                elif mod_of[a] == mod_of[b]:
                    p, lo, hi = P.p_module, 400, 1000
                elif fam_of[a] == fam_of[b]:
                    p, lo, hi = P.p_family, 150, 700
                else:
                    p, lo, hi = P.p_background, 150, 700
                if rng.random() < p:
                    ppi.add(a, b, int(rng.integers(lo, hi)))

    homology = ingest.SimilarityEdgeList()
    for s in range(1, P.species):
        for i in range(n):
            a, b = f"S0P{i:03d}", f"S{s}P{i:03d}"
            sim = round(float(rng.uniform(0.6, 0.95)), 4)
            if not (orphan[a] or orphan[b]):
                homology.add(a, b, sim)
        for i in range(n):
            for j in range(n):
                if i != j and rng.random() < P.p_homology_noise:
                    homology.add(f"S0P{i:03d}", f"S{s}P{j:03d}", round(float(rng.uniform(0.3, 0.6)), 4))

    roles = rng.choice(3, size=len(ids), p=np.asarray(P.split_fracs) / sum(P.split_fracs))
    windows = [(dt.date(2015, 1, 1), SPLIT_DATES[0]), (SPLIT_DATES[0], SPLIT_DATES[1]),
               (SPLIT_DATES[1], SPLIT_DATES[2] + dt.timedelta(days=1))]
    annotations = []
    first_date = {}
    for pid, role in zip(ids, roles):
        lo, hi = windows[role]
        day = lo + dt.timedelta(days=int(rng.integers((hi - lo).days)))
        first_date[pid] = day
        for t in planted[pid]:
            annotations.append(Annotation(pid, t, day, "EXP"))
    annotations.sort()

    manifest = {
        "params": asdict(P),
        "split_dates": [d.isoformat() for d in SPLIT_DATES],
        "families": {pid: fam_of[pid] for pid in ids},
        "modules": {pid: mod_of[pid] for pid in ids},
        "module_terms": [t for _, t in modules],
        "family_terms": fams,
        "family_letters": ["".join(x) for x in fam_letters],
        "orphans": sorted(p for p in ids if orphan[p]),
        "orthologs": [[f"S0P{i:03d}", f"S{s}P{i:03d}"] for s in range(1, P.species) for i in range(n)],
        "planted": planted,
    }
    return FixtureBundle(P, dag, sequences, coords, ppi, homology, annotations,
                         FeatureTable(ids, np.array(feats)), manifest)


def write_bundle(bundle: FixtureBundle, root) -> None:
    root = Path(root)
    atomic_write(root / "go.obo", write_obo(bundle.dag))
    atomic_write(root / "sequences.fasta", ingest.write_fasta(bundle.sequences))
    for pid, rec in sorted(bundle.coords.items()):
        atomic_write(root / "structures" / f"{pid}.ca", ingest.write_coords(rec))
    atomic_write(root / "ppi.tsv", ingest.write_edges(bundle.ppi, "protein1\tprotein2\tscore"))
    atomic_write(root / "homology.tsv", ingest.write_edges(bundle.homology))
    atomic_write(root / "annotations.tsv", ingest.write_annotations(bundle.annotations))
    atomic_write(root / "features_se.hse", ingest.dump_feature_table(bundle.features))
    atomic_write(root / "manifest.json", json.dumps(bundle.manifest, indent=1, sort_keys=True) + "\n")
