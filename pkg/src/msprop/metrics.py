"""CAFA-style protein-centric metrics.

All threshold sweeps use ``tau in {0.01, ..., 1.00}`` by default and count a
term as predicted when ``score >= tau``. Only proteins with at least one
true term are evaluated. Precision at a threshold averages over the
evaluated proteins that have at least one predicted term; recall averages
over all evaluated proteins. In the IC-weighted variants every (protein,
term) pair counts with weight IC(term) instead of 1.
"""

from __future__ import annotations

import numpy as np

DEFAULT_GRID = np.arange(1, 101) / 100.0


class MetricError(ValueError):
    pass


def _check(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise MetricError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    return pred, truth


def _weights(ic, c):
    if ic is None:
        return np.ones(c)
    w = np.asarray(getattr(ic, "values", ic), dtype=np.float64).ravel()
    if w.size != c:
        raise MetricError(f"{w.size} IC weights for {c} terms")
    return w


def _pr_at(pred, truth, w, tau):
    has_truth = (truth * w).sum(axis=1) > 0
    P = (pred >= tau).astype(np.float64)
    tp = (P * truth) @ w
    npred = P @ w
    ntrue = truth @ w
    covered = has_truth & (npred > 0)
    recall = (tp[has_truth] / ntrue[has_truth]).mean()
    if not covered.any():
        return np.nan, recall
    precision = (tp[covered] / npred[covered]).mean()
    return precision, recall


def pr_curve(pred, truth, ic=None, grid=DEFAULT_GRID):
    """Rows ``(tau, precision, recall)``; precision is NaN where nothing is predicted."""
    pred, truth = _check(pred, truth)
    w = _weights(ic, truth.shape[1])
    if not ((truth * w).sum(axis=1) > 0).any():
        raise MetricError("no protein has a true label")
    return [(float(t), *_pr_at(pred, truth, w, t)) for t in grid]


def _f(p, r):
    if np.isnan(p) or p + r == 0:
        return 0.0
    return 2 * p * r / (p + r)


def fmax(pred, truth, grid=DEFAULT_GRID, ic=None):
    """Return (Fmax, threshold achieving it); ties keep the lowest threshold."""
    best = (0.0, float(grid[0]))
    for tau, p, r in pr_curve(pred, truth, ic, grid):
        f = _f(p, r)
        if f > best[0]:
            best = (f, tau)
    return best


def weighted_fmax(pred, truth, ic, grid=DEFAULT_GRID):
    return fmax(pred, truth, grid, ic=ic)


def smin(pred, truth, ic, grid=DEFAULT_GRID):
    """Minimum over thresholds of sqrt(ru^2 + mi^2); returns (Smin, threshold)."""
    pred, truth = _check(pred, truth)
    if ic is None:
        raise MetricError("Smin needs IC weights")
    w = _weights(ic, truth.shape[1])
    evaluated = truth.sum(axis=1) > 0
    if not evaluated.any():
        raise MetricError("no protein has a true label")
    pred, truth = pred[evaluated], truth[evaluated]
    best = (np.inf, float(grid[0]))
    for tau in grid:
        P = (pred >= tau).astype(np.float64)
        ru = (((1.0 - P) * truth) @ w).mean()
        mi = ((P * (1.0 - truth)) @ w).mean()
        s = float(np.sqrt(ru * ru + mi * mi))
        if s < best[0]:
            best = (s, float(tau))
    return best


def aupr(pred, truth, ic=None):
    """Micro-averaged average precision over all (protein, term) pairs.

    Pairs with equal scores form one threshold step.
    """
    pred, truth = _check(pred, truth)
    w = np.broadcast_to(_weights(ic, truth.shape[1]), truth.shape).ravel()
    s = pred.ravel()
    y = truth.ravel()
    pos_w = (y * w).sum()
    if pos_w <= 0:
        raise MetricError("AUPR needs at least one positive pair")
    order = np.argsort(-s, kind="stable")
    s, y, w = s[order], y[order], w[order]
    last = np.r_[s[1:] != s[:-1], True]  # end of each tie group
    tp = np.cumsum(y * w)[last]
    fp = np.cumsum((1.0 - y) * w)[last]
    denom = tp + fp
    precision = np.divide(tp, denom, out=np.zeros_like(tp), where=denom > 0)
    recall = tp / pos_w
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def weighted_aupr(pred, truth, ic):
    return aupr(pred, truth, ic=ic)


def evaluate(pred, truth, ic, grid=DEFAULT_GRID) -> dict:
    """The five reported metrics."""
    return {
        "Fmax": fmax(pred, truth, grid)[0],
        "Smin": smin(pred, truth, ic, grid)[0],
        "AUPR": aupr(pred, truth),
        "wFmax": weighted_fmax(pred, truth, ic, grid)[0],
        "wAUPR": weighted_aupr(pred, truth, ic),
    }


def pr_curve_csv(curve) -> str:
    lines = ["tau,precision,recall"]
    lines += [f"{t:.2f},{p:.10g},{r:.10g}" for t, p, r in curve]
    return "\n".join(lines) + "\n"
