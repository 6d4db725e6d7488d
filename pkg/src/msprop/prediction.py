"""Label diffusion over the learned attention and fusion with model output."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_PHI = {"BPO": 0.2, "MFO": 0.4, "CCO": 0.5}


@dataclass
class FusionConfig:
    phi: dict = field(default_factory=lambda: dict(DEFAULT_PHI))

    def __getitem__(self, branch):
        return self.phi[branch]


def row_l2_normalize(x):
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


def label_propagate(A_p, A_s, Y, clamp_mask, layers: int = 2):
    """Diffuse labels; clamped rows are reset to ``Y`` after every layer.

    Unclamped rows start at zero (their labels are unknown).
    """
    clamp = np.asarray(clamp_mask, dtype=bool)
    Y = np.asarray(Y, dtype=np.float64)
    cur = np.where(clamp[:, None], Y, 0.0)
    for _ in range(layers):
        cur = row_l2_normalize(np.asarray(A_p @ cur) + np.asarray(A_s @ cur))
        cur[clamp] = Y[clamp]
    return cur


def fuse(y_out, y_label, phi: float):
    y_out = np.asarray(y_out, dtype=np.float64)
    y_label = np.asarray(y_label, dtype=np.float64)
    if y_out.shape != y_label.shape:
        raise ValueError(f"shape mismatch {y_out.shape} vs {y_label.shape}")
    if phi == 1.0:
        return np.clip(y_out, 0.0, 1.0)
    if phi == 0.0:
        return np.clip(y_label, 0.0, 1.0)
    return np.clip(phi * y_out + (1.0 - phi) * y_label, 0.0, 1.0)


def format_predictions(ids, terms, scores, threshold: float = 0.01) -> str:
    """``protein<TAB>GO id<TAB>score`` for every score >= threshold."""
    lines = []
    for i, pid in enumerate(ids):
        row = scores[i]
        for j in np.flatnonzero(row >= threshold):
            lines.append(f"{pid}\t{terms[j]}\t{row[j]:.6f}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_predictions(text: str, ids, terms) -> np.ndarray:
    pi = {p: i for i, p in enumerate(ids)}
    ti = {t: j for j, t in enumerate(terms)}
    out = np.zeros((len(ids), len(terms)))
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected 'protein<TAB>term<TAB>score'")
        p, t, s = parts
        if p in pi and t in ti:
            out[pi[p], ti[t]] = float(s)
    return out
