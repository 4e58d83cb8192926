"""Forecast error metrics and rank correlation, numpy only."""

from __future__ import annotations

import numpy as np

__all__ = ["mse", "mae", "spearman", "average_ranks"]


def _paired(pred, truth):
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    return p, t


def mse(pred, truth) -> float:
    p, t = _paired(pred, truth)
    return float(np.mean((p - t) ** 2))


def mae(pred, truth) -> float:
    p, t = _paired(pred, truth)
    return float(np.mean(np.abs(p - t)))


def average_ranks(a) -> np.ndarray:
    """1-based ranks; tied values share the mean of their rank block."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 1:
        raise ValueError("ranks are defined for 1-d data")
    order = np.argsort(a, kind="stable")
    sorted_vals = a[order]
    # block boundaries between runs of equal values
    edges = np.flatnonzero(np.diff(sorted_vals) != 0.0) + 1
    starts = np.concatenate([[0], edges])
    ends = np.concatenate([edges, [a.size]])
    ranks = np.empty(a.size)
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = 0.5 * (s + 1 + e)  # mean of ranks s+1 .. e
    return ranks


def spearman(x, y) -> float:
    """Spearman rank correlation with average ranks for ties.

    A constant column has no ordering information and scores 0 by the same
    degenerate-input convention the similarity metrics use.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("spearman expects two equal-length 1-d columns")
    if x.size < 2:
        raise ValueError("need at least 2 observations")
    rx = average_ranks(x)
    ry = average_ranks(y)
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    nx = np.sqrt(rx @ rx)
    ny = np.sqrt(ry @ ry)
    if nx == 0.0 or ny == 0.0:
        return 0.0
    return float((rx @ ry) / (nx * ny))
