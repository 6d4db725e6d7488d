"""GO DAG parsing, true-path closure, label matrices and IC weights."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from typing import Iterable

import numpy as np

from .numeric import ConfigError

log = logging.getLogger(__name__)

NAMESPACES = {
    "biological_process": "BPO",
    "molecular_function": "MFO",
    "cellular_component": "CCO",
}
BRANCHES = ("BPO", "MFO", "CCO")


class OboFormatError(ValueError):
    pass


class IngestionError(ValueError):
    pass


@dataclass(frozen=True)
class GoTerm:
    id: str
    namespace: str
    parents: tuple = ()  # ((parent_id, "is_a" | "part_of"), ...)
    name: str = ""
    obsolete: bool = False


@dataclass
class GoDag:
    terms: dict

    def __post_init__(self):
        self._ancestors: dict = {}
        self.order = self._toposort()

    def _toposort(self):
        ts = TopologicalSorter()
        for t in self.terms.values():
            ts.add(t.id, *(p for p, _ in t.parents))
        try:
            return tuple(ts.static_order())
        except CycleError as exc:
            raise OboFormatError(f"cycle in ontology: {exc.args[1]}") from None

    def __len__(self):
        return len(self.terms)

    def __contains__(self, term_id):
        return term_id in self.terms

    def parents(self, term_id) -> list:
        return [p for p, _ in self.terms[term_id].parents]

    def namespace_terms(self, namespace) -> list:
        return sorted(t.id for t in self.terms.values() if t.namespace == namespace)

    def roots(self) -> list:
        return sorted(t.id for t in self.terms.values() if not t.parents)

    def edge_count(self) -> int:
        return sum(len(t.parents) for t in self.terms.values())

    def ancestors(self, term_id) -> frozenset:
        """Ancestors of ``term_id`` including itself."""
        if not self._ancestors:
            for tid in self.order:  # parents come first
                acc = {tid}
                for p in self.parents(tid):
                    acc |= self._ancestors[p]
                self._ancestors[tid] = frozenset(acc)
        return self._ancestors[term_id]


def parse_obo(text: str) -> GoDag:
    """Parse go-basic style OBO text keeping only is_a / part_of links."""
    stanzas = []
    cur = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("!"):
            continue
        if line.startswith("["):
            cur = {"_kind": line, "_line": lineno, "is_a": [], "part_of": []}
            stanzas.append(cur)
            continue
        if cur is None or cur["_kind"] != "[Term]":
            continue
        if ":" not in line:
            raise OboFormatError(f"line {lineno}: expected 'tag: value'")
        tag, value = line.split(":", 1)
        value = value.split("!", 1)[0].strip()
        if tag == "id":
            cur["id"] = value
        elif tag == "namespace":
            cur["namespace"] = value
        elif tag == "name":
            cur["name"] = value
        elif tag == "is_obsolete":
            cur["obsolete"] = value.lower() == "true"
        elif tag == "is_a":
            cur["is_a"].append(value.split()[0])
        elif tag == "relationship":
            parts = value.split()
            if len(parts) >= 2 and parts[0] == "part_of":
                cur["part_of"].append(parts[1])

    raw_terms = {}
    obsolete = set()
    for st in stanzas:
        if st["_kind"] != "[Term]":
            continue
        if "id" not in st:
            raise OboFormatError(f"line {st['_line']}: [Term] without id")
        if st["id"] in raw_terms or st["id"] in obsolete:
            raise OboFormatError(f"line {st['_line']}: duplicate term {st['id']}")
        if st.get("obsolete"):
            obsolete.add(st["id"])
            continue
        ns = st.get("namespace", "")
        raw_terms[st["id"]] = GoTerm(
            id=st["id"],
            namespace=NAMESPACES.get(ns, ns),
            parents=tuple([(p, "is_a") for p in st["is_a"]] + [(p, "part_of") for p in st["part_of"]]),
            name=st.get("name", ""),
        )

    terms = {}
    for tid, t in raw_terms.items():
        kept = []
        for p, rel in t.parents:
            if p in obsolete:
                warnings.warn(f"{tid}: dropping link to obsolete term {p}")
                continue
            if p not in raw_terms:
                raise OboFormatError(f"{tid}: dangling parent {p}")
            if (p, rel) not in kept:
                kept.append((p, rel))
        terms[tid] = GoTerm(tid, t.namespace, tuple(kept), t.name)
    return GoDag(terms)


def write_obo(dag: GoDag) -> str:
    inv = {v: k for k, v in NAMESPACES.items()}
    out = ["format-version: 1.2", ""]
    for tid in sorted(dag.terms):
        t = dag.terms[tid]
        out += ["[Term]", f"id: {tid}"]
        if t.name:
            out.append(f"name: {t.name}")
        out.append(f"namespace: {inv.get(t.namespace, t.namespace)}")
        for p, rel in t.parents:
            out.append(f"is_a: {p}" if rel == "is_a" else f"relationship: part_of {p}")
        out.append("")
    return "\n".join(out)


def branch_filter(dag: GoDag, namespace: str) -> GoDag:
    keep = {tid for tid, t in dag.terms.items() if t.namespace == namespace}
    if not keep:
        warnings.warn(f"namespace {namespace} has no terms")
    terms = {
        tid: GoTerm(tid, namespace, tuple((p, r) for p, r in dag.terms[tid].parents if p in keep),
                    dag.terms[tid].name)
        for tid in keep
    }
    return GoDag(terms)


@dataclass
class LabelMatrix:
    proteins: list
    terms: list
    Y: np.ndarray
    namespace: str = ""

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=np.float64)
        if self.Y.shape != (len(self.proteins), len(self.terms)):
            raise ValueError("label matrix shape does not match ids")
        self.term_index = {t: j for j, t in enumerate(self.terms)}
        self.protein_index = {p: i for i, p in enumerate(self.proteins)}

    def rows(self, proteins) -> np.ndarray:
        return self.Y[[self.protein_index[p] for p in proteins]]

    def subset(self, proteins) -> "LabelMatrix":
        return LabelMatrix(list(proteins), list(self.terms), self.rows(proteins), self.namespace)

    def is_closed(self, dag: GoDag) -> bool:
        for j, t in enumerate(self.terms):
            for a in dag.ancestors(t):
                k = self.term_index.get(a)
                if k is not None and np.any(self.Y[:, j] > self.Y[:, k]):
                    return False
        return True

    def label_sets(self) -> dict:
        return {p: {self.terms[j] for j in np.flatnonzero(self.Y[i])} for i, p in enumerate(self.proteins)}


def true_path_closure(dag: GoDag, annotations: Iterable, namespace: str | None = None,
                      proteins=None, terms=None) -> LabelMatrix:
    """Close (protein, term) annotations over is_a/part_of ancestors.

    With ``namespace`` set, annotations to terms of other branches are skipped;
    without it the DAG must hold a single namespace. Columns default to every
    term of the branch in sorted order.
    """
    annotations = list(annotations)
    missing = sorted({t for _, t in annotations if t not in dag})
    if missing:
        raise IngestionError(f"annotated terms absent from ontology: {', '.join(missing)}")
    if namespace is None:
        spaces = {t.namespace for t in dag.terms.values()}
        if len(spaces) > 1:
            raise ConfigError(f"DAG spans namespaces {sorted(spaces)}; pass namespace=")
        namespace = spaces.pop() if spaces else ""
    if terms is None:
        terms = dag.namespace_terms(namespace)
    col = {t: j for j, t in enumerate(terms)}
    by_protein: dict = {}
    for prot, term in annotations:
        if dag.terms[term].namespace != namespace:
            continue
        by_protein.setdefault(prot, set()).update(dag.ancestors(term))
    if proteins is None:
        proteins = sorted(by_protein)
    Y = np.zeros((len(proteins), len(terms)))
    for i, p in enumerate(proteins):
        for t in by_protein.get(p, ()):
            j = col.get(t)
            if j is not None:
                Y[i, j] = 1.0
    return LabelMatrix(list(proteins), list(terms), Y, namespace)


@dataclass
class ICWeights:
    terms: list
    values: np.ndarray
    index: dict = field(init=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.index = {t: j for j, t in enumerate(self.terms)}

    def __getitem__(self, term):
        return self.values[self.index[term]]


def compute_ic(train_labels: LabelMatrix, pseudocount: float = 1.0) -> ICWeights:
    """IC(t) = -log2((count(t) + a) / (N + a)), a the add-one pseudocount."""
    n = train_labels.Y.shape[0]
    if n == 0 or not train_labels.terms:
        raise ConfigError("cannot compute IC from an empty label matrix")
    counts = train_labels.Y.sum(axis=0)
    ic = -np.log2((counts + pseudocount) / (n + pseudocount))
    return ICWeights(list(train_labels.terms), np.maximum(ic, 0.0))


# -- label TSV: protein<TAB>GO:a,GO:b ------------------------------------

def write_label_tsv(labels: LabelMatrix) -> str:
    lines = []
    for i, p in enumerate(labels.proteins):
        ids = [labels.terms[j] for j in np.flatnonzero(labels.Y[i])]
        lines.append(f"{p}\t{','.join(ids)}")
    return "\n".join(lines) + ("\n" if lines else "")


def read_label_tsv(text: str, dag: GoDag, namespace: str | None = None, terms=None) -> LabelMatrix:
    """Load a label TSV; closure is re-applied so the result is always closed."""
    pairs, proteins = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise IngestionError(f"line {lineno}: expected 'protein<TAB>terms'")
        prot, ids = parts[0].strip(), parts[1].strip()
        proteins.append(prot)
        pairs += [(prot, t) for t in ids.split(",") if t]
    labels = true_path_closure(dag, pairs, namespace=namespace, proteins=proteins, terms=terms)
    given = len(pairs)
    if given and labels.Y.sum() > given:
        log.info("label file was not closed; closure added %d entries", int(labels.Y.sum()) - given)
    return labels
