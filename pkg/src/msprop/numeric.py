"""Dense/sparse linear algebra with explicit backward passes.

Dense matrices are float64 numpy arrays; sparse matrices are
``scipy.sparse.csr_matrix`` in canonical form (sorted, unique columns).
Every differentiable op comes as a ``*_forward`` / ``*_backward`` pair or
returns its gradient directly; there is no tape.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

PROB_CLAMP = 1e-7
LN_EPS = 1e-5


class DimensionError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class GradientCheckError(RuntimeError):
    pass


def as_dense(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite entries in dense matrix")
    return a


def csr(dense_or_triplets, shape=None) -> sp.csr_matrix:
    """Build a canonical CSR matrix from a dense array or (rows, cols, vals)."""
    if isinstance(dense_or_triplets, tuple):
        r, c, v = dense_or_triplets
        m = sp.csr_matrix((np.asarray(v, float), (np.asarray(r), np.asarray(c))), shape=shape)
    else:
        m = sp.csr_matrix(np.asarray(dense_or_triplets, dtype=np.float64))
    m.sum_duplicates()
    m.sort_indices()
    return m


def dense_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def dense_matmul_backward(a, b, grad_out):
    """Gradients of ``a @ b`` with respect to ``a`` and ``b``."""
    return grad_out @ b.T, a.T @ grad_out


def sparse_dense_matmul(s: sp.csr_matrix, d: np.ndarray) -> np.ndarray:
    if s.shape[1] != d.shape[0]:
        raise DimensionError(f"cannot multiply sparse {s.shape} by {d.shape}")
    return np.asarray(s @ d)


def sparse_dense_matmul_backward(s: sp.csr_matrix, d: np.ndarray, grad_out: np.ndarray):
    """Return (grad wrt s.data in CSR order, grad wrt d)."""
    rows = np.repeat(np.arange(s.shape[0]), np.diff(s.indptr))
    g_vals = np.einsum("ij,ij->i", grad_out[rows], d[s.indices])
    return g_vals, np.asarray(s.T @ grad_out)


# -- activations ------------------------------------------------------------

def activation(x: np.ndarray, kind: str, slope: float = 0.2) -> np.ndarray:
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "leaky_relu":
        return np.where(x > 0, x, slope * x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "identity":
        return x.copy()
    raise ConfigError(f"unknown activation {kind!r}")


def activation_backward(x, out, grad_out, kind: str, slope: float = 0.2):
    """Gradient wrt the pre-activation ``x`` given the forward output ``out``."""
    if kind == "relu":
        return grad_out * (x > 0)
    if kind == "leaky_relu":
        return grad_out * np.where(x > 0, 1.0, slope)
    if kind == "sigmoid":
        return grad_out * out * (1.0 - out)
    if kind == "tanh":
        return grad_out * (1.0 - out * out)
    if kind == "identity":
        return grad_out
    raise ConfigError(f"unknown activation {kind!r}")


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# -- layer norm -------------------------------------------------------------

def layer_norm_forward(x, gain, bias, eps: float = LN_EPS):
    gain = np.asarray(gain, float).reshape(-1)
    bias = np.asarray(bias, float).reshape(-1)
    if x.shape[1] != gain.size or gain.size != bias.size:
        raise DimensionError(f"row width {x.shape[1]} vs gain {gain.size} / bias {bias.size}")
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * gain + bias, (xhat, inv, gain)


def layer_norm(x, gain, bias, eps: float = LN_EPS):
    return layer_norm_forward(x, gain, bias, eps)[0]


def layer_norm_backward(grad_out, cache):
    xhat, inv, gain = cache
    d = xhat.shape[1]
    g_gain = (grad_out * xhat).sum(axis=0)
    g_bias = grad_out.sum(axis=0)
    gx_hat = grad_out * gain
    gx = inv / d * (d * gx_hat - gx_hat.sum(axis=1, keepdims=True)
                    - xhat * (gx_hat * xhat).sum(axis=1, keepdims=True))
    return gx, g_gain, g_bias


# -- dropout / loss ---------------------------------------------------------

def dropout_mask(shape, rate: float, training: bool, rng: np.random.Generator) -> np.ndarray:
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def bce_loss(pred, target, reduction: str = "sum", mask=None):
    """Binary cross-entropy and its gradient wrt ``pred``.

    ``mask`` is an optional per-row 0/1 vector; masked-out rows contribute
    neither loss nor gradient.
    """
    if pred.shape != target.shape:
        raise DimensionError(f"pred {pred.shape} vs target {target.shape}")
    p = np.clip(pred, PROB_CLAMP, 1.0 - PROB_CLAMP)
    elem = -(target * np.log(p) + (1.0 - target) * np.log(1.0 - p))
    grad = (p - target) / (p * (1.0 - p))
    if mask is not None:
        m = np.asarray(mask, float).reshape(-1, 1)
        elem = elem * m
        grad = grad * m
        count = m.sum() * pred.shape[1]
    else:
        count = elem.size
    loss = elem.sum()
    if reduction == "mean":
        count = max(count, 1)
        return loss / count, grad / count
    if reduction != "sum":
        raise ConfigError(f"unknown reduction {reduction!r}")
    return loss, grad


def bce_with_logits(logits, target, reduction: str = "sum", mask=None):
    """BCE of ``sigmoid(logits)`` computed stably; gradient is wrt the logits.

    Agrees with ``bce_loss(sigmoid(logits), target)`` wherever the
    probabilities lie inside the clamp, and keeps a non-vanishing gradient
    ``sigmoid(z) - y`` where they do not.
    """
    if logits.shape != target.shape:
        raise DimensionError(f"logits {logits.shape} vs target {target.shape}")
    elem = np.logaddexp(0.0, logits) - target * logits
    grad = sigmoid(logits) - target
    if mask is not None:
        m = np.asarray(mask, float).reshape(-1, 1)
        elem = elem * m
        grad = grad * m
        count = m.sum() * logits.shape[1]
    else:
        count = elem.size
    loss = elem.sum()
    if reduction == "mean":
        count = max(count, 1)
        return loss / count, grad / count
    if reduction != "sum":
        raise ConfigError(f"unknown reduction {reduction!r}")
    return loss, grad


# -- parameters and Adam ----------------------------------------------------

@dataclass
class Param:
    value: np.ndarray
    grad: np.ndarray = None

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape:
            raise DimensionError("gradient shape differs from value shape")

    def zero_grad(self):
        self.grad[...] = 0.0


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_update(params: Sequence[Param], state: AdamState) -> None:
    """One bias-corrected Adam step using each param's ``grad``, in place."""
    if not state.m:
        state.m = [np.zeros_like(p.value) for p in params]
        state.v = [np.zeros_like(p.value) for p in params]
    if len(state.m) != len(params):
        raise DimensionError("optimizer state does not match parameter list")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.value -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


# -- gradient checking ------------------------------------------------------

def finite_difference_check(
    f: Callable[[], float],
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    h: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
    atol: float = 1e-4,
) -> float:
    """Max relative error between ``grads`` and central differences of ``f``.

    ``f`` is re-evaluated after perturbing the arrays in ``params`` in place.
    The relative error of one coordinate is
    ``|analytic - numeric| / max(|analytic|, |numeric|, atol)``; the floor
    keeps round-off on near-zero gradients from dominating.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for value, grad in zip(params, grads):
        flat = value.reshape(-1)
        gflat = np.asarray(grad).reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for i in coords:
            old = flat[i]
            flat[i] = old + h
            fp = f()
            flat[i] = old - h
            fm = f()
            flat[i] = old
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise GradientCheckError(f"objective became non-finite at coordinate {i}")
            num = (fp - fm) / (2.0 * h)
            err = abs(gflat[i] - num) / max(abs(gflat[i]), abs(num), atol)
            worst = max(worst, err)
    return worst
