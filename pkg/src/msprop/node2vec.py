"""Second-order biased random walks and skip-gram embeddings on contact graphs."""

from __future__ import annotations

import bisect
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .contact import ContactGraph
from .ingest import ALPHABET


@dataclass
class WalkConfig:
    p: float = 1.0
    q: float = 1.0
    walk_length: int = 40
    walks_per_node: int = 10
    seed: int = 0
    greedy: bool = False  # always take the most probable next hop

    def __post_init__(self):
        if self.p <= 0 or self.q <= 0:
            raise ValueError("p and q must be positive")
        if self.walk_length < 2:
            raise ValueError("walk_length must be >= 2")


@dataclass
class EmbeddingConfig:
    dim: int = 64
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    lr: float = 0.025
    seed: int = 0
    batch_size: int = 1024


def search_bias(dist_tx: int, p: float, q: float) -> float:
    """Return/in-out factor for a candidate at hop distance ``dist_tx`` from the previous node."""
    if dist_tx == 0:
        return 1.0 / p
    if dist_tx == 1:
        return 1.0
    if dist_tx == 2:
        return 1.0 / q
    raise ValueError(f"distance {dist_tx} impossible for a neighbour of the current node")


def transition_probs(g: ContactGraph, prev, current: int, cfg: WalkConfig, neighbors=None):
    """Return (candidate nodes, probabilities) for the step after ``prev -> current``.

    ``prev`` is None on the first hop, which is uniform. Contact edges have
    unit weight.
    """
    nbrs = neighbors if neighbors is not None else g.neighbors()
    cand = nbrs[current]
    if not cand:
        return [], np.zeros(0)
    if prev is None:
        pi = np.ones(len(cand))
    else:
        prev_nbrs = set(nbrs[prev])
        pi = np.array([
            search_bias(0 if x == prev else (1 if x in prev_nbrs else 2), cfg.p, cfg.q)
            for x in cand
        ])
    return list(cand), pi / pi.sum()


def _cumulative_tables(g, cfg, nbrs):
    first = {}
    for v in range(g.n):
        if nbrs[v]:
            first[v] = np.cumsum(np.full(len(nbrs[v]), 1.0 / len(nbrs[v]))).tolist()
    second = {}
    for t in range(g.n):
        for v in nbrs[t]:
            _, probs = transition_probs(g, t, v, cfg, nbrs)
            second[(t, v)] = probs
    return first, second


def _pick(cand, probs_or_cum, u, greedy, probs=None):
    if greedy:
        return cand[int(np.argmax(probs))]
    k = bisect.bisect_right(probs_or_cum, u)
    return cand[min(k, len(cand) - 1)]


def generate_walks(g: ContactGraph, cfg: WalkConfig) -> list:
    """``walks_per_node`` walks from every node; each start node has its own derived seed."""
    nbrs = g.neighbors()
    first, second = _cumulative_tables(g, cfg, nbrs)
    second_cum = {k: np.cumsum(v).tolist() for k, v in second.items()}
    children = np.random.SeedSequence(cfg.seed).spawn(g.n)
    per_node = []
    for start in range(g.n):
        rng = np.random.default_rng(children[start])
        uniforms = rng.random((cfg.walks_per_node, cfg.walk_length)).tolist()
        walks = []
        for r in range(cfg.walks_per_node):
            u = uniforms[r]
            walk = [start]
            if nbrs[start]:
                cand = nbrs[start]
                walk.append(cand[0] if cfg.greedy else _pick(cand, first[start], u[1], False))
                while len(walk) < cfg.walk_length:
                    t, v = walk[-2], walk[-1]
                    walk.append(_pick(nbrs[v], second_cum[(t, v)], u[len(walk)], cfg.greedy, second[(t, v)]))
            walks.append(walk)
        per_node.append(walks)
    # round-major order: walk r of every node, then walk r+1
    return [per_node[s][r] for r in range(cfg.walks_per_node) for s in range(g.n)]


def _context_pairs(walks, window):
    centers, contexts = [], []
    by_len: dict = {}
    for w in walks:
        by_len.setdefault(len(w), []).append(w)
    for n, group in sorted(by_len.items()):
        arr = np.asarray(group, dtype=np.int64)
        for off in range(1, min(window, n - 1) + 1):
            a, b = arr[:, :-off].ravel(), arr[:, off:].ravel()
            centers += [a, b]
            contexts += [b, a]
    if not centers:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(centers), np.concatenate(contexts)


def _scatter_add(target, idx, updates):
    # np.add.at is slow; a 0/1 selector matrix does the same scatter
    n = target.shape[0]
    if n * idx.size <= 4_000_000:
        sel = np.zeros((n, idx.size))
        sel[idx, np.arange(idx.size)] = 1.0
    else:
        sel = sp.csr_matrix((np.ones(idx.size), (idx, np.arange(idx.size))), shape=(n, idx.size))
    target += sel @ updates


def train_skipgram(walks, n_nodes: int, cfg: EmbeddingConfig) -> np.ndarray:
    """Skip-gram with negative sampling, mini-batched, linearly decayed learning rate.

    Negatives come from the unigram^0.75 distribution over the walk corpus.
    """
    if not walks:
        raise ValueError("empty walk corpus")
    rng = np.random.default_rng(cfg.seed)
    emb = (rng.random((n_nodes, cfg.dim)) - 0.5) / cfg.dim
    ctx = np.zeros((n_nodes, cfg.dim))
    if cfg.epochs == 0:
        return emb
    centers, contexts = _context_pairs(walks, cfg.window)
    if centers.size == 0:
        return emb
    freq = np.bincount(np.concatenate([np.asarray(w) for w in walks]), minlength=n_nodes).astype(float)
    noise = freq ** 0.75
    noise_cum = np.cumsum(noise / noise.sum())
    total = cfg.epochs * int(np.ceil(centers.size / cfg.batch_size))
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(centers.size)
        for start in range(0, order.size, cfg.batch_size):
            b = order[start:start + cfg.batch_size]
            lr = cfg.lr * max(1.0 - step / total, 1e-4)
            step += 1
            c, o = centers[b], contexts[b]
            neg = np.searchsorted(noise_cum, rng.random((b.size, cfg.negatives)), side="right")
            neg = np.minimum(neg, n_nodes - 1)
            targets = np.concatenate([o[:, None], neg], axis=1)  # (B, 1+K)
            labels = np.zeros(targets.shape)
            labels[:, 0] = 1.0
            vc = emb[c]  # (B, d)
            vo = ctx[targets]  # (B, 1+K, d)
            score = np.einsum("bd,bkd->bk", vc, vo)
            # gradient ascent on log sigma(+s) for positives and log sigma(-s) for negatives
            g = labels - 1.0 / (1.0 + np.exp(-np.clip(score, -30, 30)))
            grad_c = np.einsum("bk,bkd->bd", g, vo)
            grad_o = g[:, :, None] * vc[:, None, :]
            _scatter_add(emb, c, lr * grad_c)
            _scatter_add(ctx, targets.reshape(-1), lr * grad_o.reshape(-1, cfg.dim))
    return emb


def one_hot_letters(letters: str) -> np.ndarray:
    index = {a: i for i, a in enumerate(ALPHABET)}
    out = np.zeros((len(letters), len(ALPHABET)))
    unknown = set()
    for r, a in enumerate(letters.upper()):
        k = index.get(a)
        if k is None:
            unknown.add(a)
            k = index["X"]
        out[r, k] = 1.0
    if unknown:
        warnings.warn(f"unknown residue letters {sorted(unknown)} mapped to X")
    return out


def residue_features(embeddings: np.ndarray, letters: str) -> np.ndarray:
    """Per-residue rows ``embedding || one-hot(letter)``; width d_emb + 25."""
    if embeddings.shape[0] != len(letters):
        raise ValueError(f"{embeddings.shape[0]} embedding rows for {len(letters)} residues")
    return np.concatenate([embeddings, one_hot_letters(letters)], axis=1)


def embed_graph(g: ContactGraph, walk_cfg: WalkConfig, emb_cfg: EmbeddingConfig) -> np.ndarray:
    walks = generate_walks(g, walk_cfg)
    return train_skipgram(walks, g.n, emb_cfg)


def write_embeddings(emb: np.ndarray) -> str:
    return "".join(f"{i} " + " ".join(repr(float(v)) for v in row) + "\n" for i, row in enumerate(emb))


def read_embeddings(text: str) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if int(parts[0]) != len(rows):
            raise ValueError(f"line {lineno}: node ids must be 0..n-1 in order")
        rows.append([float(v) for v in parts[1:]])
    if len({len(r) for r in rows}) > 1:
        raise ValueError("ragged embedding dump")
    return np.array(rows)
