"""Rolling correlation matrices and thresholded market graphs."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ingest import ReturnMatrix

logger = logging.getLogger(__name__)

_VAR_EPS = 1e-300


@dataclass(frozen=True)
class CorrelationMatrix:
    tickers: tuple[str, ...]
    window_end: np.datetime64
    window_len: int
    values: np.ndarray
    zero_variance: np.ndarray  # bool per ticker


def pearson_matrix(obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pearson correlation of the rows of ``obs`` (N x M).

    Returns ``(values, zero_variance)``. Rows with zero variance get zero
    off-diagonal correlation and are flagged.
    """
    obs = np.asarray(obs, dtype=float)
    if obs.shape[1] < 2:
        raise ValueError("need at least two observations per series")
    centered = obs - obs.mean(axis=1, keepdims=True)
    ss = np.einsum("ij,ij->i", centered, centered)
    zero = ss <= _VAR_EPS
    norm = np.sqrt(np.where(zero, 1.0, ss))
    unit = centered / norm[:, None]
    values = unit @ unit.T
    values[zero, :] = 0.0
    values[:, zero] = 0.0
    np.clip(values, -1.0, 1.0, out=values)
    np.fill_diagonal(values, 1.0)
    values = 0.5 * (values + values.T)
    return values, zero


def _window_days(returns: ReturnMatrix, window_len: int, window_end) -> np.ndarray:
    days = returns.days
    end = np.datetime64(window_end, "D")
    pos = np.searchsorted(days, end, side="right")
    if pos == 0 or days[pos - 1] != end:
        raise ValueError(f"window_end {end} is not a trading day in the data")
    if pos < window_len:
        raise ValueError(f"window ending {end} needs {window_len} days, only {pos} available")
    return days[pos - window_len:pos]


def window_observations(returns: ReturnMatrix, window_len: int, window_end,
                        frequency: str = "bar") -> np.ndarray:
    """Return the N x M observation matrix for the window at ``frequency``.

    ``"bar"`` keeps raw bar returns; ``"daily"`` sums log returns per day.
    """
    days = _window_days(returns, window_len, window_end)
    mask = returns.day_slice(days[0], days[-1])
    block = returns.returns[:, mask]
    if frequency == "bar":
        return block
    if frequency == "daily":
        sess = returns.sessions[mask]
        _, inverse = np.unique(sess, return_inverse=True)
        out = np.zeros((block.shape[0], len(days)))
        np.add.at(out.T, inverse, block.T)
        return out
    raise ValueError(f"unknown frequency {frequency!r}")


def rolling_correlation(returns: ReturnMatrix, window_len: int, window_end,
                        frequency: str = "bar") -> CorrelationMatrix:
    """Pearson correlation over the ``window_len`` trading days ending at ``window_end``."""
    obs = window_observations(returns, window_len, window_end, frequency)
    values, zero = pearson_matrix(obs)
    if zero.any():
        logger.info("window %s: zero-variance tickers %s", window_end,
                    [returns.tickers[i] for i in np.flatnonzero(zero)])
    return CorrelationMatrix(returns.tickers, np.datetime64(window_end, "D"),
                             window_len, values, zero)


def normalize_adjacency(adjacency: np.ndarray) -> np.ndarray:
    """Renormalized adjacency ``D^-1/2 (A + I) D^-1/2`` with D the degree of A + I."""
    a_hat = np.asarray(adjacency, dtype=float) + np.eye(len(adjacency))
    d_inv_sqrt = 1.0 / np.sqrt(a_hat.sum(axis=1))
    return a_hat * d_inv_sqrt[:, None] * d_inv_sqrt[None, :]


def adjacency_from_edges(n: int, edges: np.ndarray) -> np.ndarray:
    a = np.zeros((n, n))
    edges = np.asarray(edges, dtype=int).reshape(-1, 2)
    a[edges[:, 0], edges[:, 1]] = 1.0
    a[edges[:, 1], edges[:, 0]] = 1.0
    return a


def zscore_columns(x: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=0, keepdims=True)
    sd = x.std(axis=0, keepdims=True)
    return np.where(sd > 0, (x - mu) / np.where(sd > 0, sd, 1.0), 0.0)


@dataclass(frozen=True)
class MarketGraph:
    """Threshold graph for one window, ready for the auto-encoder."""

    tickers: tuple[str, ...]
    window_end: np.datetime64
    window_len: int
    threshold: float
    adjacency: np.ndarray
    features: np.ndarray
    norm_adjacency: np.ndarray = field(repr=False, default=None)
    edge_list: np.ndarray = field(repr=False, default=None)
    zero_variance: np.ndarray = field(repr=False, default=None)

    def __post_init__(self) -> None:
        a = np.asarray(self.adjacency, dtype=float)
        if a.shape != (len(self.tickers),) * 2:
            raise ValueError("adjacency shape does not match tickers")
        if not np.array_equal(a, a.T) or np.any(np.diag(a) != 0):
            raise ValueError("adjacency must be symmetric with zero diagonal")
        x = np.asarray(self.features, dtype=float)
        if x.shape[0] != len(self.tickers):
            raise ValueError("features need one row per ticker")
        object.__setattr__(self, "adjacency", a)
        object.__setattr__(self, "features", x)
        if self.norm_adjacency is None:
            object.__setattr__(self, "norm_adjacency", normalize_adjacency(a))
        if self.edge_list is None:
            u, v = np.nonzero(np.triu(a, k=1))
            object.__setattr__(self, "edge_list", np.stack([u, v], axis=1))
        if self.zero_variance is None:
            object.__setattr__(self, "zero_variance", np.zeros(len(self.tickers), dtype=bool))
        for arr in (self.adjacency, self.features, self.norm_adjacency, self.edge_list):
            arr.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return len(self.tickers)

    @property
    def n_edges(self) -> int:
        return len(self.edge_list)

    @property
    def is_empty(self) -> bool:
        return self.n_edges == 0

    def permuted(self, order) -> MarketGraph:
        """Relabel nodes: new node ``i`` is old node ``order[i]``."""
        order = np.asarray(order)
        return MarketGraph(
            tuple(self.tickers[i] for i in order), self.window_end, self.window_len,
            self.threshold, self.adjacency[np.ix_(order, order)], self.features[order],
            zero_variance=self.zero_variance[order],
        )

    def with_edges(self, edges: np.ndarray) -> MarketGraph:
        """Same nodes and features, different edge set."""
        return MarketGraph(self.tickers, self.window_end, self.window_len, self.threshold,
                           adjacency_from_edges(self.n_nodes, edges), self.features,
                           zero_variance=self.zero_variance)

    def header(self) -> dict:
        return {
            "window_end": str(self.window_end),
            "S": int(self.window_len),
            "threshold": float(self.threshold),
            "N": self.n_nodes,
            "edges": self.n_edges,
            "F": int(self.features.shape[1]),
            "tickers": list(self.tickers),
        }


def build_features(returns: ReturnMatrix, window_len: int, window_end,
                   feature_spec: str = "daily") -> np.ndarray:
    """Node features from the window's returns, each column z-scored across tickers.

    ``"daily"`` gives one column per trading day (summed log returns);
    ``"bar"`` uses the raw bar returns.
    """
    obs = window_observations(returns, window_len, window_end, feature_spec)
    return zscore_columns(obs)


def threshold_graph(corr: CorrelationMatrix, threshold: float, returns: ReturnMatrix,
                    feature_spec: str = "daily") -> MarketGraph:
    """Edge between u != v iff ``corr[u, v] > threshold`` (strict)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    a = (corr.values > threshold).astype(float)
    np.fill_diagonal(a, 0.0)
    a = np.maximum(a, a.T)
    x = build_features(returns, corr.window_len, corr.window_end, feature_spec)
    g = MarketGraph(corr.tickers, corr.window_end, corr.window_len, threshold, a, x,
                    zero_variance=corr.zero_variance)
    if g.is_empty:
        logger.warning("graph %s has no edges", corr.window_end)
    return g


def _build_one(args) -> MarketGraph:
    returns, window_len, end, threshold, feature_spec, frequency = args
    corr = rolling_correlation(returns, window_len, end, frequency)
    return threshold_graph(corr, threshold, returns, feature_spec)


def graph_sequence(returns: ReturnMatrix, window_len: int = 20, threshold: float = 0.7,
                   feature_spec: str = "daily", corr_frequency: str = "bar",
                   jobs: int = 1) -> list[MarketGraph]:
    """One graph per trading day from day ``window_len`` on, advancing one day at a time."""
    days = returns.days
    if len(days) < window_len:
        raise ValueError(f"need at least {window_len} trading days, have {len(days)}")
    tasks = [(returns, window_len, d, threshold, feature_spec, corr_frequency)
             for d in days[window_len - 1:]]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_build_one, tasks))
    return [_build_one(t) for t in tasks]


def edge_overlap(g1: MarketGraph, g2: MarketGraph) -> float:
    """Jaccard overlap of two graphs' edge sets (1.0 when both empty)."""
    a1, a2 = np.triu(g1.adjacency, 1) > 0, np.triu(g2.adjacency, 1) > 0
    union = np.count_nonzero(a1 | a2)
    return 1.0 if union == 0 else np.count_nonzero(a1 & a2) / union


# -- serialization -----------------------------------------------------------

def write_graph(graph: MarketGraph, directory: str | Path, stem: str | None = None) -> Path:
    """Write ``<stem>.edges.csv``, ``<stem>.features.csv`` and ``<stem>.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = stem or str(graph.window_end)
    with (directory / f"{stem}.edges.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["u", "v"])
        w.writerows(graph.edge_list.tolist())
    with (directory / f"{stem}.features.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["ticker"] + [f"f{i + 1}" for i in range(graph.features.shape[1])])
        for t, row in zip(graph.tickers, graph.features):
            w.writerow([t] + [repr(float(x)) for x in row])
    header = graph.header()
    header["zero_variance"] = [int(i) for i in np.flatnonzero(graph.zero_variance)]
    path = directory / f"{stem}.json"
    path.write_text(json.dumps(header, sort_keys=True), encoding="utf-8")
    return path


def read_graph(directory: str | Path, stem: str) -> MarketGraph:
    directory = Path(directory)
    header = json.loads((directory / f"{stem}.json").read_text(encoding="utf-8"))
    with (directory / f"{stem}.edges.csv").open(encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    edges = np.array([[int(u), int(v)] for u, v in rows], dtype=int).reshape(-1, 2)
    with (directory / f"{stem}.features.csv").open(encoding="utf-8", newline="") as fh:
        frows = list(csv.reader(fh))[1:]
    feats = np.array([[float(x) for x in r[1:]] for r in frows])
    n = header["N"]
    zero = np.zeros(n, dtype=bool)
    zero[header.get("zero_variance", [])] = True
    return MarketGraph(tuple(header["tickers"]), np.datetime64(header["window_end"], "D"),
                       header["S"], header["threshold"], adjacency_from_edges(n, edges),
                       feats.reshape(n, -1), zero_variance=zero)
