"""Ranking and association metrics.

Degenerate inputs (single-class AUROC, constant series) return NaN rather
than raising, so a whole indicator series can be computed and the absent
points filtered afterwards.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.stats import rankdata


def auroc(scores, labels) -> float:
    """Probability a random positive outscores a random negative, ties half.

    Mann-Whitney form on mid-ranks, O(n log n). NaN when either class is empty.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have equal length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return math.nan
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return math.nan
    return float(dx @ dy / math.sqrt(sxx * syy))


def spearman(x, y) -> float:
    """Pearson correlation of mid-ranks; pairs with a NaN on either side are dropped."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError("series must have equal length")
    ok = np.isfinite(x) & np.isfinite(y)
    x, y = x[ok], y[ok]
    if len(x) < 3:
        return math.nan
    return pearson(rankdata(x), rankdata(y))


def r_squared(actual, predicted) -> float:
    """``1 - SSE/SST`` around the mean of ``actual``; NaN when ``actual`` is constant."""
    actual = np.asarray(actual, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if actual.shape != predicted.shape or len(actual) < 2:
        raise ValueError("need two equal-length series of length >= 2")
    sst = float(np.sum((actual - actual.mean()) ** 2))
    if sst == 0.0:
        return math.nan
    sse = float(np.sum((actual - predicted) ** 2))
    return 1.0 - sse / sst


def silverman_bandwidth(samples) -> float:
    x = np.asarray(samples, dtype=float)
    sd = x.std(ddof=1) if len(x) > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    bw = 0.9 * spread * len(x) ** (-0.2)
    if bw <= 0:
        # point mass: fall back to a width relative to the location
        bw = 1e-3 * max(1.0, abs(float(x.mean())))
    return float(bw)


def kde(samples, bandwidth: float | str | None = None, grid_size: int = 512,
        pad: float = 4.0) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian kernel density on an even grid spanning the samples +/- ``pad`` bandwidths.

    Returns ``(grid, density)``.
    """
    x = np.asarray(samples, dtype=float)
    x = x[np.isfinite(x)]
    if len(x) < 2:
        raise ValueError("kde needs at least two samples")
    if bandwidth is None or bandwidth == "silverman":
        bw = silverman_bandwidth(x)
    elif isinstance(bandwidth, str):
        raise ValueError(f"unknown bandwidth rule {bandwidth!r}")
    else:
        bw = float(bandwidth)
        if bw <= 0:
            raise ValueError("bandwidth must be positive")
    grid = np.linspace(x.min() - pad * bw, x.max() + pad * bw, grid_size)
    density = np.zeros(grid_size)
    norm = 1.0 / (len(x) * bw * math.sqrt(2.0 * math.pi))
    for chunk in np.array_split(x, max(1, len(x) // 2048)):
        u = (grid[:, None] - chunk[None, :]) / bw
        density += np.exp(-0.5 * u * u).sum(axis=1)
    return grid, density * norm
