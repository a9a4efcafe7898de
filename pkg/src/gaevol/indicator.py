"""Walk-forward instability indicator.

For each consecutive pair of daily graphs, a fresh auto-encoder is trained on
the earlier graph and scored on the later graph's edges against an equal
number of sampled non-edges. The resulting AUROC series is the indicator.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import metrics
from .corrnet import MarketGraph
from .gae import (GaeHyper, GaeModel, TrainingError, edge_logits, encode, non_edges,
                  save_model, split_edges, train)

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["date", "auroc", "train_edges", "test_edges", "val_auroc", "epochs", "flag"]


@dataclass(frozen=True)
class IndicatorPoint:
    date: np.datetime64
    auroc: float
    train_edges: int
    test_edges: int
    val_auroc: float
    epochs: int
    seed: int
    flag: str = ""


@dataclass(frozen=True)
class IndicatorSeries:
    points: tuple[IndicatorPoint, ...]

    def __post_init__(self) -> None:
        d = self.dates
        if len(d) > 1 and np.any(np.diff(d) <= np.timedelta64(0, "D")):
            raise ValueError("indicator dates must be strictly increasing")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def dates(self) -> np.ndarray:
        return np.array([p.date for p in self.points], dtype="datetime64[D]")

    @property
    def auroc(self) -> np.ndarray:
        return np.array([p.auroc for p in self.points], dtype=float)

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for p in self.points:
                w.writerow([str(p.date), "" if math.isnan(p.auroc) else repr(p.auroc),
                            p.train_edges, p.test_edges,
                            "" if math.isnan(p.val_auroc) else repr(p.val_auroc),
                            p.epochs, p.flag])

    @classmethod
    def from_csv(cls, path: str | Path) -> IndicatorSeries:
        def num(text):
            return float(text) if text else math.nan

        with Path(path).open(encoding="utf-8", newline="") as fh:
            pts = [IndicatorPoint(np.datetime64(r["date"], "D"), num(r["auroc"]),
                                  int(r["train_edges"]), int(r["test_edges"]),
                                  num(r["val_auroc"]), int(r["epochs"]), -1, r["flag"])
                   for r in csv.DictReader(fh)]
        return cls(tuple(pts))


def day_seed(base_seed: int, date) -> int:
    """Deterministic per-day seed from the base seed and the calendar date."""
    ordinal = int(np.datetime64(date, "D").astype(np.int64))
    return int(np.random.SeedSequence([int(base_seed), ordinal]).generate_state(1)[0])


def evaluate_next_day(model: GaeModel, train_graph: MarketGraph, test_graph: MarketGraph,
                      seed: int, eval_embedding: str = "test_graph_holdout",
                      n_folds: int = 10) -> tuple[float, str]:
    """AUROC of the trained model on the next day's edges vs sampled non-edges.

    ``eval_embedding`` picks the encoder input used for scoring:

    * ``test_graph_holdout``: the next day's graph with the scored edges
      hidden, in ``n_folds`` folds, so no positive is visible to the encoder
      while it is scored;
    * ``test_graph``: the full next-day graph (scored edges visible);
    * ``train_graph``: the training day's graph.

    Returns ``(auroc, flag)``; ``auroc`` is NaN and ``flag`` names the
    reason when the test graph is degenerate.
    """
    if train_graph.tickers != test_graph.tickers:
        raise ValueError("train and test graphs must share ticker universe and order")
    if test_graph.n_edges == 0:
        return math.nan, "test_graph_no_edges"
    pool = non_edges(test_graph.adjacency)
    if len(pool) == 0:
        return math.nan, "test_graph_complete"
    rng = np.random.default_rng(seed)
    n_neg = min(len(pool), test_graph.n_edges)
    neg = pool[rng.choice(len(pool), size=n_neg, replace=False)]
    pos = test_graph.edge_list
    if eval_embedding == "test_graph":
        z = encode(model, test_graph)
        pos_scores = edge_logits(z, pos)
        neg_scores = edge_logits(z, neg)
    elif eval_embedding == "train_graph":
        z = encode(model, train_graph)
        pos_scores = edge_logits(z, pos)
        neg_scores = edge_logits(z, neg)
    elif eval_embedding == "test_graph_holdout":
        pos_scores, neg_scores = _holdout_scores(model, test_graph, pos, neg, rng, n_folds)
    else:
        raise ValueError(f"unknown eval_embedding {eval_embedding!r}")
    scores = np.concatenate([pos_scores, neg_scores])
    labels = np.concatenate([np.ones(len(pos)), np.zeros(n_neg)])
    return metrics.auroc(scores, labels), ""


def _holdout_scores(model, graph, pos, neg, rng, n_folds):
    """Score each positive with that edge's fold hidden from the encoder input."""
    folds = rng.permutation(len(pos)) % max(1, min(n_folds, len(pos)))
    neg_folds = rng.integers(0, folds.max() + 1, size=len(neg))
    pos_scores = np.empty(len(pos))
    neg_scores = np.empty(len(neg))
    for k in range(folds.max() + 1):
        kept = graph.with_edges(pos[folds != k])
        z = encode(model, kept)
        pos_scores[folds == k] = edge_logits(z, pos[folds == k])
        neg_scores[neg_folds == k] = edge_logits(z, neg[neg_folds == k])
    return pos_scores, neg_scores


def _evaluate_pair(args) -> IndicatorPoint:
    g_t, g_next, hyper, seed, eval_embedding, model_dir = args
    split_seed, train_seed, eval_seed = np.random.SeedSequence(seed).generate_state(3)
    date = g_next.window_end
    try:
        split = split_edges(g_t, hyper.split, int(split_seed))
        model, trace = train(g_t, split, hyper.replace(seed=int(train_seed)))
    except (ValueError, TrainingError) as exc:
        logger.warning("indicator %s: training skipped: %s", date, exc)
        return IndicatorPoint(date, math.nan, g_t.n_edges, g_next.n_edges, math.nan, 0, seed,
                              "train_failed")
    if model_dir is not None:
        save_model(model, Path(model_dir) / f"gae_{g_t.window_end}", g_t.window_end)
    value, flag = evaluate_next_day(model, g_t, g_next, int(eval_seed), eval_embedding)
    return IndicatorPoint(date, value, g_t.n_edges, g_next.n_edges, trace.best_val_auroc,
                          trace.epochs_run, seed, flag)


def walk_forward(graphs: list[MarketGraph], hyper: GaeHyper = GaeHyper(), base_seed: int = 0,
                 eval_embedding: str = "test_graph_holdout", jobs: int = 1,
                 model_dir: str | Path | None = None) -> IndicatorSeries:
    """Train on each graph, score the next; one point per consecutive pair.

    With ``model_dir`` each day's trained weights are checkpointed there.
    """
    if len(graphs) < 2:
        raise ValueError("walk_forward needs at least two graphs")
    tasks = [(g_t, g_next, hyper, day_seed(base_seed, g_next.window_end), eval_embedding,
              model_dir)
             for g_t, g_next in zip(graphs[:-1], graphs[1:])]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            points = list(pool.map(_evaluate_pair, tasks, chunksize=4))
    else:
        points = [_evaluate_pair(t) for t in tasks]
    return IndicatorSeries(tuple(points))
