"""Residue contact graphs from C-alpha coordinates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .ingest import CoordinateRecord

DEFAULT_THRESHOLD = 10.0


@dataclass
class ContactGraph:
    n: int
    letters: str
    edges: np.ndarray  # (m, 2) int array, i < j, lexicographically sorted
    self_loops: bool = False

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)

    def adjacency(self) -> sp.csr_matrix:
        """Symmetric 0/1 adjacency without self-loops."""
        i, j = self.edges[:, 0], self.edges[:, 1]
        a = sp.csr_matrix((np.ones(2 * len(i)), (np.r_[i, j], np.r_[j, i])), shape=(self.n, self.n))
        a.sort_indices()
        return a

    def neighbors(self) -> list:
        a = self.adjacency()
        return [a.indices[a.indptr[k]:a.indptr[k + 1]].tolist() for k in range(self.n)]


def build_contact_map(coords: CoordinateRecord, threshold: float = DEFAULT_THRESHOLD) -> ContactGraph:
    """Edge (i, j) for i != j iff the C-alpha distance is <= threshold."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    xyz = np.asarray(coords.xyz, dtype=np.float64)
    if xyz.shape[0] < 1:
        raise ValueError("no residues")
    if not np.all(np.isfinite(xyz)):
        raise ValueError("non-finite coordinates")
    diff = xyz[:, None, :] - xyz[None, :, :]
    dist = np.sqrt((diff * diff).sum(-1))
    i, j = np.nonzero(np.triu(dist <= threshold, k=1))
    return ContactGraph(len(xyz), coords.letters, np.stack([i, j], axis=1))


def normalize_adjacency(a: sp.spmatrix) -> sp.csr_matrix:
    """D^-1/2 (A + I) D^-1/2 for a symmetric 0/1 adjacency without self-loops."""
    n = a.shape[0]
    a_hat = (sp.csr_matrix(a) + sp.identity(n, format="csr")).tocsr()
    a_hat.sum_duplicates()
    deg = np.asarray(a_hat.sum(axis=1)).ravel()
    d = 1.0 / np.sqrt(deg)
    out = sp.csr_matrix(a_hat.multiply(d[:, None]).multiply(d[None, :]))
    out.sort_indices()
    return out


def normalized_adjacency(g: ContactGraph) -> sp.csr_matrix:
    return normalize_adjacency(g.adjacency())


def write_edge_list(g: ContactGraph) -> str:
    head = f"# n={g.n} letters={g.letters}\n"
    return head + "".join(f"{i} {j}\n" for i, j in g.edges.tolist())


def read_edge_list(text: str) -> ContactGraph:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# n="):
        raise ValueError("edge list missing '# n=.. letters=..' header")
    meta = dict(kv.split("=", 1) for kv in lines[0][2:].split())
    edges = [tuple(int(v) for v in l.split()) for l in lines[1:] if l.strip()]
    return ContactGraph(int(meta["n"]), meta.get("letters", ""), np.array(edges, dtype=np.int64).reshape(-1, 2))
