"""Graph-convolution + attention-pooling encoder over residue contact graphs.

Each pooling module runs ``n_conv`` GCN layers, scores nodes with one more
graph convolution, keeps the top ``ceil(k * n)`` nodes scaled by their score
and reads out ``mean || max``. Module m+1 runs on the subgraph kept by module
m. Module readouts are summed into the protein's hidden vector, which feeds a
three-layer MLP classifier during training and is exported as the protein's
structural feature afterwards.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from . import serialize
from .contact import normalize_adjacency
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
    sigmoid,
)

log = logging.getLogger(__name__)

MAGIC = b"SMP1"


class TrainingError(RuntimeError):
    pass


@dataclass
class StructConfig:
    d_in: int = 89
    hidden: int = 512  # d2; readouts have width 2 * hidden
    n_conv: int = 3
    n_modules: int = 2
    pool_rate: float = 0.75
    mlp_widths: tuple = ()  # hidden widths of the classifier; default (2*d2, d2)
    dropout: float = 0.5
    conv_act: str = "relu"
    score_act: str = "tanh"
    readout: str = "mean"  # "sum" swaps the mean half of the readout
    lr: float = 5e-4
    epochs: int = 20
    batch_size: int = 32
    reduction: str = "sum"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.pool_rate <= 1.0:
            raise ConfigError("pool_rate must lie in (0, 1]")
        if not self.mlp_widths:
            self.mlp_widths = (2 * self.hidden, self.hidden)
        self.mlp_widths = tuple(int(w) for w in self.mlp_widths)


# -- single operations ---------------------------------------------------------

def gcn_layer(adj_norm, h, theta, act: str = "relu"):
    return activation(np.asarray(adj_norm @ h) @ theta, act)


def attention_scores(adj_norm, h_conv, theta_s, act: str = "tanh"):
    return activation(np.asarray(adj_norm @ h_conv) @ theta_s, act).ravel()


def pool_size(n: int, k: float) -> int:
    # guard against k*n landing a hair above an integer
    return max(1, math.ceil(k * n - 1e-9))


def top_select(scores, k: float, n: int | None = None) -> np.ndarray:
    """Indices of the ceil(k*n) best scores, ties to the lower index, sorted ascending."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    n = scores.size if n is None else n
    if not 0.0 < k <= 1.0:
        raise ConfigError("pooling rate must lie in (0, 1]")
    order = np.lexsort((np.arange(n), -scores[:n]))
    return np.sort(order[:pool_size(n, k)])


def pool_subgraph(h_conv, adj, scores, idx):
    """Kept rows scaled by their score, and the induced (un-normalised) adjacency."""
    idx = np.asarray(idx)
    if idx.size == 0:
        raise ValueError("empty node selection")
    s = np.asarray(scores).ravel()
    h_sub = h_conv[idx] * s[idx, None]
    a_sub = sp.csr_matrix(adj)[idx][:, idx]
    return h_sub, sp.csr_matrix(a_sub)


def readout(h_sub, mode: str = "mean"):
    pooled = h_sub.mean(axis=0) if mode == "mean" else h_sub.sum(axis=0)
    return np.concatenate([pooled, h_sub.max(axis=0)])


def readout_backward(h_sub, grad, mode: str = "mean"):
    n, d = h_sub.shape
    g = np.repeat(grad[None, :d] / (n if mode == "mean" else 1.0), n, axis=0)
    arg = h_sub.argmax(axis=0)
    g[arg, np.arange(d)] += grad[d:]
    return g


# -- model ---------------------------------------------------------------------

@dataclass
class StructExample:
    """A contact graph (raw 0/1 adjacency without self-loops) and residue features."""
    adj: sp.csr_matrix
    features: np.ndarray

    def __post_init__(self):
        self.adj = sp.csr_matrix(self.adj)
        self.adj_norm = normalize_adjacency(self.adj)


class StructureModel:
    def __init__(self, cfg: StructConfig, n_labels: int, params: dict | None = None):
        self.cfg = cfg
        self.n_labels = n_labels
        self.params = params if params is not None else self._init_params()

    def _init_params(self):
        cfg = self.cfg
        rng = np.random.default_rng(cfg.seed)
        p = {}
        for m in range(cfg.n_modules):
            for l in range(cfg.n_conv):
                fan_in = cfg.d_in if (m == 0 and l == 0) else cfg.hidden
                p[f"conv{m}.{l}"] = Param(glorot_uniform(rng, fan_in, cfg.hidden))
            p[f"score{m}"] = Param(glorot_uniform(rng, cfg.hidden, 1))
        widths = (2 * cfg.hidden, *cfg.mlp_widths, self.n_labels)
        for k in range(len(widths) - 1):
            p[f"mlp{k}.W"] = Param(glorot_uniform(rng, widths[k], widths[k + 1]))
            p[f"mlp{k}.b"] = Param(np.zeros((1, widths[k + 1])))
        return p

    @property
    def n_mlp(self):
        return len(self.cfg.mlp_widths) + 1

    def param_list(self):
        return list(self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    # graph part ---------------------------------------------------------------
    def _module_forward(self, m, adj, adj_norm, h):
        cfg = self.cfg
        layers = []
        x = h
        for l in range(cfg.n_conv):
            ax = np.asarray(adj_norm @ x)
            z = ax @ self.params[f"conv{m}.{l}"].value
            out = activation(z, cfg.conv_act)
            layers.append((ax, z, out))
            x = out
        ah = np.asarray(adj_norm @ x)
        zs = ah @ self.params[f"score{m}"].value
        s = activation(zs, cfg.score_act)
        idx = top_select(s, cfg.pool_rate)
        h_sub, a_sub = pool_subgraph(x, adj, s, idx)
        r = readout(h_sub, cfg.readout)
        cache = dict(adj_norm=adj_norm, layers=layers, x=x, ah=ah, zs=zs, s=s, idx=idx, h_sub=h_sub)
        return r, h_sub, a_sub, cache

    def _module_backward(self, m, g_r, g_hsub, c):
        cfg = self.cfg
        g_hsub = readout_backward(c["h_sub"], g_r, cfg.readout) + g_hsub
        idx, x, s = c["idx"], c["x"], c["s"]
        g_x = np.zeros_like(x)
        g_x[idx] += g_hsub * s[idx]
        g_s = np.zeros_like(s)
        g_s[idx, 0] = (g_hsub * x[idx]).sum(axis=1)
        g_zs = activation_backward(c["zs"], s, g_s, cfg.score_act)
        th_s = self.params[f"score{m}"]
        th_s.grad += c["ah"].T @ g_zs
        adj_t = c["adj_norm"].T
        g_x += np.asarray(adj_t @ (g_zs @ th_s.value.T))
        for l in reversed(range(cfg.n_conv)):
            ax, z, out = c["layers"][l]
            g_z = activation_backward(z, out, g_x, cfg.conv_act)
            th = self.params[f"conv{m}.{l}"]
            th.grad += ax.T @ g_z
            g_x = np.asarray(adj_t @ (g_z @ th.value.T))
        return g_x

    def graph_forward(self, ex: StructExample):
        """Summed module readouts for one protein, plus caches for backward."""
        adj, adj_norm, h = ex.adj, ex.adj_norm, ex.features
        hidden = np.zeros(2 * self.cfg.hidden)
        caches = []
        for m in range(self.cfg.n_modules):
            r, h, adj, cache = self._module_forward(m, adj, adj_norm, h)
            adj_norm = normalize_adjacency(adj)
            hidden = hidden + r
            caches.append(cache)
        return hidden, caches

    def graph_backward(self, g_hidden, caches):
        g_next = None
        for m in reversed(range(self.cfg.n_modules)):
            extra = np.zeros_like(caches[m]["h_sub"]) if g_next is None else g_next
            g_next = self._module_backward(m, g_hidden, extra, caches[m])
        return g_next

    # classifier ---------------------------------------------------------------
    def mlp_forward(self, hidden, training=False, rng=None):
        """Return (logits, cache)."""
        x = hidden
        cache = []
        for k in range(self.n_mlp):
            z = x @ self.params[f"mlp{k}.W"].value + self.params[f"mlp{k}.b"].value
            if k == self.n_mlp - 1:
                cache.append((x, z, None))
                return z, cache
            a = activation(z, "relu")
            mask = dropout_mask(a.shape, self.cfg.dropout, training, rng)
            cache.append((x, z, mask))
            x = a * mask

    def mlp_backward(self, g_logit, cache):
        g = g_logit
        for k in reversed(range(self.n_mlp)):
            x, z, mask = cache[k]
            if mask is not None:
                g = (g * mask) * (z > 0)
            self.params[f"mlp{k}.W"].grad += x.T @ g
            self.params[f"mlp{k}.b"].grad += g.sum(axis=0, keepdims=True)
            g = g @ self.params[f"mlp{k}.W"].value.T
        return g

    def forward(self, ex: StructExample, training=False, rng=None):
        """Return (probabilities over labels, hidden structural vector)."""
        hidden, _ = self.graph_forward(ex)
        logits, _ = self.mlp_forward(hidden[None, :], training, rng)
        return sigmoid(logits)[0], hidden

    def loss_and_grad(self, batch, targets, training=False, rng=None, reduction=None):
        """Summed BCE over a batch; accumulates gradients into params."""
        reduction = reduction or self.cfg.reduction
        hiddens, caches = zip(*(self.graph_forward(ex) for ex in batch))
        H = np.stack(hiddens)
        logits, mcache = self.mlp_forward(H, training, rng)
        loss, g_logit = bce_with_logits(logits, targets, reduction)
        g_H = self.mlp_backward(g_logit, mcache)
        for i, c in enumerate(caches):
            self.graph_backward(g_H[i], c)
        return loss

    # persistence --------------------------------------------------------------
    def to_bytes(self, meta: dict | None = None) -> bytes:
        info = {"config": asdict(self.cfg), "n_labels": self.n_labels}
        info.update(meta or {})
        return serialize.pack(MAGIC, info, {k: p.value for k, p in self.params.items()})

    @classmethod
    def from_bytes(cls, data: bytes):
        meta, arrays = serialize.unpack(data, MAGIC)
        cfg = StructConfig(**meta["config"])
        model = cls(cfg, meta["n_labels"], {k: Param(v) for k, v in arrays.items()})
        model.meta = meta
        return model


def struct_train(examples, Y: np.ndarray, cfg: StructConfig, n_labels: int | None = None,
                 model: StructureModel | None = None, log_fn=None) -> StructureModel:
    """Mini-batch Adam training; returns the trained model (``model.history`` holds epoch losses)."""
    Y = np.asarray(Y, dtype=np.float64)
    model = model or StructureModel(cfg, n_labels if n_labels is not None else Y.shape[1])
    state = AdamState(lr=cfg.lr)
    params = model.param_list()
    model.history = []
    n = len(examples)
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            b = order[start:start + cfg.batch_size]
            model.zero_grad()
            loss = model.loss_and_grad([examples[i] for i in b], Y[b], training=True, rng=rng)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch starting {start}")
            adam_update(params, state)
            total += loss
        model.history.append(total)
        log.info("struct epoch %d loss %.6f", epoch, total)
        if log_fn:
            log_fn(epoch, total)
    return model


def extract_hidden(model: StructureModel, examples: dict, protein_ids) -> tuple[np.ndarray, list]:
    """Structural features for ``protein_ids``; missing structures give zero rows."""
    out = np.zeros((len(protein_ids), 2 * model.cfg.hidden))
    missing = []
    for i, pid in enumerate(protein_ids):
        ex = examples.get(pid)
        if ex is None:
            missing.append(pid)
            continue
        out[i] = model.graph_forward(ex)[0]
    if missing:
        warnings.warn(f"{len(missing)} proteins without structure got zero structural features")
    return out, missing


def mean_residue_features(examples: dict, protein_ids, width: int) -> np.ndarray:
    """Ablation stand-in for the encoder: the mean residue feature vector."""
    out = np.zeros((len(protein_ids), width))
    for i, pid in enumerate(protein_ids):
        if pid in examples:
            out[i] = examples[pid].features.mean(axis=0)
    return out
