"""Feature propagation over a two-relation protein network.

Node features pass through an input projection and a layer-normalised MLP,
then one shared single-head attention (same ``a``, ``W_t``) weights the PPI
and homology edges separately. Each propagation layer applies the same
weight to both relations with a residual connection and sums the two
branches; a sigmoid head maps to GO labels.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from . import serialize
from .ingest import EdgeList
from .numeric import (
    AdamState,
    ConfigError,
    Param,
    activation,
    activation_backward,
    adam_update,
    bce_with_logits,
    dropout_mask,
    glorot_uniform,
    layer_norm_backward,
    layer_norm_forward,
    sigmoid,
)

log = logging.getLogger(__name__)

MAGIC = b"PRP1"


class AlignmentError(ValueError):
    pass


class TrainingError(RuntimeError):
    def __init__(self, msg, last_good: bytes | None = None):
        super().__init__(msg)
        self.last_good = last_good


# -- network -------------------------------------------------------------------

@dataclass
class Relation:
    """Attention support of one edge relation: CSR pattern incl. self-loops."""
    n: int
    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray  # base edge weights (1.0 on self-loops)

    @property
    def indptr(self):
        return np.r_[0, np.cumsum(np.bincount(self.rows, minlength=self.n))]

    def matrix(self, values) -> sp.csr_matrix:
        return sp.csr_matrix((values, self.cols, self.indptr), shape=(self.n, self.n))


def build_relation(n: int, pairs, weights=None) -> Relation:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    w = np.ones(len(pairs)) if weights is None else np.asarray(weights, float)
    loop = np.arange(n)
    r = np.r_[pairs[:, 0], pairs[:, 1], loop]
    c = np.r_[pairs[:, 1], pairs[:, 0], loop]
    ww = np.r_[w, w, np.ones(n)]
    key = r * n + c
    order = np.argsort(key, kind="stable")
    key, r, c, ww = key[order], r[order], c[order], ww[order]
    first = np.r_[True, key[1:] != key[:-1]]
    if not first.all():
        # duplicate pairs: keep the max weight
        grp = np.cumsum(first) - 1
        best = np.full(first.sum(), -np.inf)
        np.maximum.at(best, grp, ww)
        r, c, ww = r[first], c[first], best
    return Relation(n, r, c, ww)


@dataclass
class HeteroNetwork:
    ids: list
    ppi: Relation
    homology: Relation

    def __post_init__(self):
        self.index = {p: i for i, p in enumerate(self.ids)}

    @property
    def n(self):
        return len(self.ids)

    def isolated(self) -> list:
        deg = np.bincount(self.ppi.rows, minlength=self.n) + np.bincount(self.homology.rows, minlength=self.n)
        return [self.ids[i] for i in np.flatnonzero(deg <= 2)]

    def without_homology(self) -> "HeteroNetwork":
        return HeteroNetwork(list(self.ids), self.ppi, build_relation(self.n, np.zeros((0, 2))))

    def permuted(self, perm) -> "HeteroNetwork":
        """Same network with node ``perm[k]`` placed at position ``k``."""
        inv = np.empty(len(perm), dtype=np.int64)
        inv[perm] = np.arange(len(perm))

        def remap(rel):
            keep = rel.rows < rel.cols
            pairs = np.stack([inv[rel.rows[keep]], inv[rel.cols[keep]]], axis=1)
            return build_relation(rel.n, pairs, rel.weights[keep])

        return HeteroNetwork([self.ids[i] for i in perm], remap(self.ppi), remap(self.homology))


def build_network(ids, ppi: EdgeList, homology: EdgeList, ppi_scale: float = 1000.0) -> HeteroNetwork:
    """Index both edge lists over ``ids``; edges touching unknown proteins are dropped."""
    ids = list(ids)
    index = {p: i for i, p in enumerate(ids)}

    def rel(edges, scale):
        pairs, w, dropped = [], [], 0
        for (a, b), s in edges.items():
            if a in index and b in index:
                pairs.append((index[a], index[b]))
                w.append(s / scale)
            else:
                dropped += 1
        if dropped:
            warnings.warn(f"{dropped} edges reference proteins outside the network")
        return build_relation(len(ids), pairs, w)

    return HeteroNetwork(ids, rel(ppi, ppi_scale), rel(homology, 1.0))


# -- attention -------------------------------------------------------------------

def segment_softmax(e, rel: Relation):
    row_max = np.full(rel.n, -np.inf)
    np.maximum.at(row_max, rel.rows, e)
    ex = np.exp(e - row_max[rel.rows])
    denom = np.bincount(rel.rows, weights=ex, minlength=rel.n)
    return ex / denom[rel.rows]


def compute_attention(rel: Relation, H, W_t, a, slope=0.2, weighted_logits=False):
    """Row-stochastic attention on the relation's support; returns (values, cache)."""
    G = H @ W_t
    L = activation(G, "leaky_relu", slope)
    d = W_t.shape[1]
    s_src = L @ a[:d]
    s_dst = L @ a[d:]
    e = s_src[rel.rows] + s_dst[rel.cols]
    if weighted_logits:
        e = e + np.log(np.maximum(rel.weights, 1e-12))
    alpha = segment_softmax(e, rel)
    return alpha, (G, L, alpha)


def attention_backward(rel: Relation, g_alpha, cache, H, W_t, a, slope=0.2):
    """Return (grad H, grad W_t, grad a)."""
    G, L, alpha = cache
    d = W_t.shape[1]
    weighted = alpha * g_alpha
    g_e = weighted - alpha * np.bincount(rel.rows, weights=weighted, minlength=rel.n)[rel.rows]
    g_src = np.bincount(rel.rows, weights=g_e, minlength=rel.n)
    g_dst = np.bincount(rel.cols, weights=g_e, minlength=rel.n)
    g_a = np.r_[L.T @ g_src, L.T @ g_dst]
    g_L = np.outer(g_src, a[:d]) + np.outer(g_dst, a[d:])
    g_G = activation_backward(G, L, g_L, "leaky_relu", slope)
    return g_G @ W_t.T, H.T @ g_G, g_a


def _edge_grad(rel: Relation, g_out, M):
    """Gradient of ``(A @ M)`` wrt the CSR values of A."""
    return np.einsum("ij,ij->i", g_out[rel.rows], M[rel.cols])


def propagate_layer(A_p, A_s, H, W, act="relu"):
    M = H @ W
    H_p = activation(np.asarray(A_p @ M) + H, act)
    H_s = activation(np.asarray(A_s @ M) + H, act)
    return activation(H_p + H_s, act)


# -- model -------------------------------------------------------------------------

@dataclass
class PropConfig:
    d_in: int = 2304
    hidden: int = 512  # d3
    mlp_layers: int = 1
    prop_layers: int = 2
    dropout: float = 0.5
    act: str = "relu"
    slope: float = 0.2
    weighted_logits: bool = False
    no_propagation: bool = False
    lr: float = 1e-3
    epochs: int = 10
    reduction: str = "sum"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.mlp_layers < 0 or self.prop_layers < 0:
            raise ConfigError("layer counts must be non-negative")


class PropagationModel:
    def __init__(self, cfg: PropConfig, n_labels: int, params: dict | None = None):
        self.cfg = cfg
        self.n_labels = n_labels
        self.params = params if params is not None else self._init_params()

    def _init_params(self):
        cfg, d = self.cfg, self.cfg.hidden
        rng = np.random.default_rng(cfg.seed)
        p = {
            "W_e": Param(glorot_uniform(rng, cfg.d_in, d)),
            "b_e": Param(np.zeros((1, d))),
        }
        for l in range(cfg.mlp_layers):
            p[f"mlp{l}.W"] = Param(glorot_uniform(rng, d, d))
            p[f"mlp{l}.b"] = Param(np.zeros((1, d)))
            p[f"mlp{l}.gain"] = Param(np.ones(d))
            p[f"mlp{l}.bias"] = Param(np.zeros(d))
        p["W_t"] = Param(glorot_uniform(rng, d, d))
        p["a"] = Param(glorot_uniform(rng, 2 * d, 1).ravel())
        for l in range(cfg.prop_layers):
            p[f"prop{l}.W"] = Param(glorot_uniform(rng, d, d))
        p["W_out"] = Param(glorot_uniform(rng, d, self.n_labels))
        p["b_out"] = Param(np.zeros((1, self.n_labels)))
        return p

    def v(self, name):
        return self.params[name].value

    def g(self, name):
        return self.params[name].grad

    def param_list(self):
        return list(self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    # forward -------------------------------------------------------------------
    def input_mlp(self, H, training=False, rng=None):
        cfg = self.cfg
        z = H @ self.v("W_e") + self.v("b_e")
        out = activation(z, cfg.act)
        mask = dropout_mask(out.shape, cfg.dropout, training, rng)
        cache = [("in", H, z, out, mask)]
        x = out * mask
        for l in range(cfg.mlp_layers):
            u = x @ self.v(f"mlp{l}.W") + self.v(f"mlp{l}.b")
            ln, ln_cache = layer_norm_forward(u, self.v(f"mlp{l}.gain"), self.v(f"mlp{l}.bias"))
            out = activation(ln, cfg.act)
            mask = dropout_mask(out.shape, cfg.dropout, training, rng)
            cache.append((x, ln, ln_cache, out, mask))
            x = out * mask
        return x, cache

    def input_mlp_backward(self, g_x, cache):
        cfg = self.cfg
        for l in reversed(range(cfg.mlp_layers)):
            x, ln, ln_cache, out, mask = cache[l + 1]
            g_ln = activation_backward(ln, out, g_x * mask, cfg.act)
            g_u, g_gain, g_bias = layer_norm_backward(g_ln, ln_cache)
            self.g(f"mlp{l}.gain")[...] += g_gain
            self.g(f"mlp{l}.bias")[...] += g_bias
            self.g(f"mlp{l}.W")[...] += x.T @ g_u
            self.g(f"mlp{l}.b")[...] += g_u.sum(axis=0, keepdims=True)
            g_x = g_u @ self.v(f"mlp{l}.W").T
        _, H, z, out, mask = cache[0]
        g_z = activation_backward(z, out, g_x * mask, cfg.act)
        self.g("W_e")[...] += H.T @ g_z
        self.g("b_e")[...] += g_z.sum(axis=0, keepdims=True)
        return g_z @ self.v("W_e").T

    def attention(self, net: HeteroNetwork, H0):
        cfg = self.cfg
        out = []
        for rel in (net.ppi, net.homology):
            alpha, cache = compute_attention(rel, H0, self.v("W_t"), self.v("a"), cfg.slope, cfg.weighted_logits)
            out.append((rel.matrix(alpha), cache))
        return out

    def forward(self, net: HeteroNetwork, H, training=False, rng=None):
        """Return (probabilities, cache). ``cache['A']`` holds (A_p, A_s) when propagating."""
        cfg = self.cfg
        H0, mlp_cache = self.input_mlp(H, training, rng)
        cache = {"mlp": mlp_cache, "H0": H0, "layers": [], "A": None}
        x = H0
        if not cfg.no_propagation:
            att = self.attention(net, H0)
            cache["att"] = att
            A_p, A_s = att[0][0], att[1][0]
            cache["A"] = (A_p, A_s)
            for l in range(cfg.prop_layers):
                W = self.v(f"prop{l}.W")
                M = x @ W
                z_p = np.asarray(A_p @ M) + x
                z_s = np.asarray(A_s @ M) + x
                h_p = activation(z_p, cfg.act)
                h_s = activation(z_s, cfg.act)
                z_o = h_p + h_s
                out = activation(z_o, cfg.act)
                cache["layers"].append((x, M, z_p, z_s, h_p, h_s, z_o, out))
                x = out
        z = x @ self.v("W_out") + self.v("b_out")
        probs = sigmoid(z)
        cache["final"] = x
        cache["logits"] = z
        return probs, cache

    def backward(self, net: HeteroNetwork, g_logits, cache):
        """Backpropagate a gradient wrt the output logits."""
        cfg = self.cfg
        g_z = g_logits
        x = cache["final"]
        self.g("W_out")[...] += x.T @ g_z
        self.g("b_out")[...] += g_z.sum(axis=0, keepdims=True)
        g_x = g_z @ self.v("W_out").T
        if not cfg.no_propagation:
            (A_p, cache_p), (A_s, cache_s) = cache["att"]
            g_alpha_p = np.zeros(A_p.nnz)
            g_alpha_s = np.zeros(A_s.nnz)
            for l in reversed(range(cfg.prop_layers)):
                xin, M, z_p, z_s, h_p, h_s, z_o, out = cache["layers"][l]
                g_zo = activation_backward(z_o, out, g_x, cfg.act)
                g_zp = activation_backward(z_p, h_p, g_zo, cfg.act)
                g_zs = activation_backward(z_s, h_s, g_zo, cfg.act)
                g_alpha_p += _edge_grad(net.ppi, g_zp, M)
                g_alpha_s += _edge_grad(net.homology, g_zs, M)
                g_M = np.asarray(A_p.T @ g_zp) + np.asarray(A_s.T @ g_zs)
                self.g(f"prop{l}.W")[...] += xin.T @ g_M
                g_x = g_zp + g_zs + g_M @ self.v(f"prop{l}.W").T
            H0 = cache["H0"]
            for rel, g_alpha, c in ((net.ppi, g_alpha_p, cache_p), (net.homology, g_alpha_s, cache_s)):
                g_H0, g_Wt, g_a = attention_backward(rel, g_alpha, c, H0, self.v("W_t"), self.v("a"), cfg.slope)
                g_x = g_x + g_H0
                self.g("W_t")[...] += g_Wt
                self.g("a")[...] += g_a
        self.input_mlp_backward(g_x, cache["mlp"])

    def loss_and_grad(self, net, H, Y, mask, training=False, rng=None):
        _, cache = self.forward(net, H, training, rng)
        loss, g_z = bce_with_logits(cache["logits"], Y, self.cfg.reduction, mask=mask)
        self.backward(net, g_z, cache)
        return loss

    def predict(self, net, H):
        probs, cache = self.forward(net, H, training=False)
        return probs, cache["A"]

    # persistence ---------------------------------------------------------------
    def to_bytes(self, state: AdamState | None = None, meta: dict | None = None) -> bytes:
        info = {"config": asdict(self.cfg), "n_labels": self.n_labels, "adam_t": 0}
        info.update(meta or {})
        arrays = {k: p.value for k, p in self.params.items()}
        if state is not None and state.m:
            info["adam_t"] = state.t
            for (k, _), m, v in zip(self.params.items(), state.m, state.v):
                arrays[f"adam.m.{k}"] = m
                arrays[f"adam.v.{k}"] = v
        return serialize.pack(MAGIC, info, arrays)

    @classmethod
    def from_bytes(cls, data: bytes):
        meta, arrays = serialize.unpack(data, MAGIC)
        cfg = PropConfig(**meta["config"])
        names = [k for k in arrays if not k.startswith("adam.")]
        model = cls(cfg, meta["n_labels"], {k: Param(arrays[k]) for k in names})
        state = AdamState(lr=cfg.lr, t=meta.get("adam_t", 0))
        if state.t:
            state.m = [arrays[f"adam.m.{k}"] for k in names]
            state.v = [arrays[f"adam.v.{k}"] for k in names]
        model.meta = meta
        return model, state


def train_propagation(net: HeteroNetwork, H, Y, train_mask, cfg: PropConfig, valid_mask=None,
                      eval_fn=None, model=None, state=None, start_epoch=0, on_epoch=None):
    """Full-batch Adam on training rows only.

    ``eval_fn(probs, valid_mask)`` gives the logged validation score. Returns
    (model, optimizer state, log rows ``(epoch, loss, valid_score)``).
    """
    Y = np.asarray(Y, dtype=np.float64)
    mask = np.asarray(train_mask, dtype=np.float64)
    model = model or PropagationModel(cfg, Y.shape[1])
    state = state or AdamState(lr=cfg.lr)
    params = model.param_list()
    rows = []
    for epoch in range(start_epoch, cfg.epochs):
        rng = np.random.default_rng([cfg.seed, epoch])
        last_good = model.to_bytes(state)
        model.zero_grad()
        loss = model.loss_and_grad(net, H, Y, mask, training=True, rng=rng)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at epoch {epoch}", last_good)
        adam_update(params, state)
        score = float("nan")
        if eval_fn is not None and valid_mask is not None and np.any(valid_mask):
            probs, _ = model.predict(net, H)
            score = eval_fn(probs, np.asarray(valid_mask, bool))
        rows.append((epoch, float(loss), score))
        log.info("prop epoch %d loss %.6f valid %.4f", epoch, loss, score)
        if on_epoch:
            on_epoch(epoch, model, state)
    return model, state, rows
