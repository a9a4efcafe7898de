"""Graph auto-encoder: two-layer GCN encoder, inner-product decoder, BCE loss.

The encoder is ``Z = A_n relu(A_n X W0) W1`` where ``A_n`` is the
renormalized adjacency. Gradients are derived by hand (reverse mode through
the decoder, both propagation steps and the ReLU mask) and fed to Adam.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import metrics
from .corrnet import MarketGraph, adjacency_from_edges, normalize_adjacency
from .optim import Adam

logger = logging.getLogger(__name__)

PROB_EPS = 1e-12


class TrainingError(RuntimeError):
    """Training refused or diverged. ``trace`` holds the epochs run so far."""

    def __init__(self, message: str, trace: TrainingTrace | None = None):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class GaeHyper:
    hidden_dim: int = 32
    latent_dim: int = 16
    learning_rate: float = 0.01
    max_epochs: int = 200
    patience: int = 20
    neg_ratio: int = 1
    seed: int = 0
    split: tuple[float, float, float] = (0.85, 0.05, 0.10)
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def replace(self, **kw) -> GaeHyper:
        d = asdict(self)
        d.update(kw)
        d["split"] = tuple(d["split"])
        return GaeHyper(**d)


@dataclass
class GaeModel:
    w0: np.ndarray
    w1: np.ndarray
    hyper: GaeHyper
    optimizer: Adam = field(repr=False, default=None)

    def __post_init__(self) -> None:
        if self.optimizer is None:
            h = self.hyper
            self.optimizer = Adam(h.learning_rate, h.beta1, h.beta2, h.adam_eps)

    @classmethod
    def init(cls, n_features: int, hyper: GaeHyper, rng: np.random.Generator | None = None) -> GaeModel:
        """Glorot-uniform weights drawn from ``rng`` (or from ``hyper.seed``)."""
        rng = rng if rng is not None else np.random.default_rng(hyper.seed)
        return cls(_glorot(rng, n_features, hyper.hidden_dim),
                   _glorot(rng, hyper.hidden_dim, hyper.latent_dim), hyper)

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {"w0": self.w0, "w1": self.w1}

    def copy(self) -> GaeModel:
        return GaeModel(self.w0.copy(), self.w1.copy(), self.hyper)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass(frozen=True)
class EdgeSplit:
    train_pos: np.ndarray
    val_pos: np.ndarray
    test_pos: np.ndarray
    val_neg: np.ndarray
    test_neg: np.ndarray
    seed: int


# -- edge bookkeeping ---------------------------------------------------------

def non_edges(adjacency: np.ndarray) -> np.ndarray:
    """All ``u < v`` pairs without an edge, as a K x 2 array."""
    n = len(adjacency)
    iu, ju = np.triu_indices(n, k=1)
    keep = adjacency[iu, ju] == 0
    return np.stack([iu[keep], ju[keep]], axis=1)


def split_edges(graph: MarketGraph, fractions=(0.85, 0.05, 0.10), seed: int = 0) -> EdgeSplit:
    """Uniform random train/val/test partition of the edges plus matched negatives.

    Validation and test sets each get at least one edge.
    """
    fr = np.asarray(fractions, dtype=float)
    if fr.shape != (3,) or np.any(fr <= 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    edges = graph.edge_list
    m = len(edges)
    if m < 10:
        raise ValueError(f"graph {graph.window_end} has {m} edges; at least 10 needed to split")
    rng = np.random.default_rng(seed)
    n_val = max(1, int(np.floor(m * fr[1] + 1e-9)))
    n_test = max(1, int(np.floor(m * fr[2] + 1e-9)))
    perm = rng.permutation(m)
    val_pos = edges[perm[:n_val]]
    test_pos = edges[perm[n_val:n_val + n_test]]
    train_pos = edges[perm[n_val + n_test:]]
    pool = non_edges(graph.adjacency)
    need = n_val + n_test
    if len(pool) == 0:
        raise ValueError("no negatives available: graph is complete")
    if len(pool) < need:
        raise ValueError(f"only {len(pool)} non-edges for {need} held-out negatives")
    pick = rng.choice(len(pool), size=need, replace=False)
    return EdgeSplit(train_pos, val_pos, test_pos, pool[pick[:n_val]], pool[pick[n_val:]], seed)


# -- forward / loss / backward ----------------------------------------------

def gcn_forward(w0: np.ndarray, w1: np.ndarray, a_norm: np.ndarray, x: np.ndarray,
                ax: np.ndarray | None = None) -> dict:
    """Two-layer GCN; returns the intermediate values needed for backprop."""
    ax = a_norm @ x if ax is None else ax
    pre = ax @ w0
    hidden = np.maximum(pre, 0.0)
    prop = a_norm @ hidden
    z = prop @ w1
    return {"ax": ax, "pre": pre, "hidden": hidden, "prop": prop, "z": z, "a_norm": a_norm}


def encode(model: GaeModel, graph: MarketGraph) -> np.ndarray:
    """Latent node matrix Z (N x K) for ``graph``."""
    if graph.features.shape[1] != model.w0.shape[0]:
        raise ValueError(
            f"graph has {graph.features.shape[1]} feature columns, model expects {model.w0.shape[0]}"
        )
    return gcn_forward(model.w0, model.w1, graph.norm_adjacency, graph.features)["z"]


def decode_edge(z_u: np.ndarray, z_v: np.ndarray) -> float:
    """Edge probability ``sigmoid(z_u . z_v)``, clamped away from 0 and 1."""
    z_u, z_v = np.asarray(z_u, dtype=float), np.asarray(z_v, dtype=float)
    if z_u.shape != z_v.shape:
        raise ValueError("latent vectors differ in dimension")
    p = float(expit(np.dot(z_u, z_v)))
    return min(max(p, PROB_EPS), 1.0 - PROB_EPS)


def edge_logits(z: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", z[pairs[:, 0]], z[pairs[:, 1]])


def edge_probs(z: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    return np.clip(expit(edge_logits(z, pairs)), PROB_EPS, 1.0 - PROB_EPS)


def bce_loss(labels, probs) -> float:
    """Mean binary cross-entropy with probabilities clamped into (eps, 1 - eps)."""
    y = np.asarray(labels, dtype=float)
    p = np.clip(np.asarray(probs, dtype=float), PROB_EPS, 1.0 - PROB_EPS)
    return float(np.mean(-y * np.log(p) - (1.0 - y) * np.log(1.0 - p)))


def batch_loss(w0, w1, a_norm, x, pairs, labels) -> float:
    z = gcn_forward(w0, w1, a_norm, x)["z"]
    return bce_loss(labels, edge_probs(z, pairs))


def backward(cache: dict, w1: np.ndarray, pairs: np.ndarray, labels: np.ndarray
             ) -> dict[str, np.ndarray]:
    """Gradients of the mean batch BCE with respect to ``w0`` and ``w1``.

    ``cache`` comes from :func:`gcn_forward` on the same weights.
    """
    z = cache["z"]
    y = np.asarray(labels, dtype=float)
    g_logit = (expit(edge_logits(z, pairs)) - y) / len(y)
    u, v = pairs[:, 0], pairs[:, 1]
    g_z = np.zeros_like(z)
    np.add.at(g_z, u, g_logit[:, None] * z[v])
    np.add.at(g_z, v, g_logit[:, None] * z[u])
    g_w1 = cache["prop"].T @ g_z
    g_hidden = cache["a_norm"].T @ (g_z @ w1.T)
    g_pre = g_hidden * (cache["pre"] > 0)
    g_w0 = cache["ax"].T @ g_pre
    return {"w0": g_w0, "w1": g_w1}


def adam_step(model: GaeModel, grads: dict[str, np.ndarray]) -> GaeModel:
    """One Adam update of both weight matrices, in place."""
    try:
        model.optimizer.step(model.params, grads)
    except FloatingPointError as exc:
        raise TrainingError(str(exc)) from exc
    return model


# -- training -----------------------------------------------------------------

@dataclass
class TrainingTrace:
    epochs: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    val_auroc: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_auroc: float = float("nan")
    test_auroc: float = float("nan")

    @property
    def epochs_run(self) -> int:
        return len(self.epochs)

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "val_auroc"])
            for row in zip(self.epochs, self.loss, self.val_auroc):
                w.writerow([row[0], repr(row[1]), repr(row[2])])


def pair_auroc(z: np.ndarray, pos: np.ndarray, neg: np.ndarray) -> float:
    scores = np.concatenate([edge_logits(z, pos), edge_logits(z, neg)])
    labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    return metrics.auroc(scores, labels)


def train(graph: MarketGraph, split: EdgeSplit, hyper: GaeHyper = GaeHyper(),
          ) -> tuple[GaeModel, TrainingTrace]:
    """Full-batch training on the training edges with early stopping on validation AUROC.

    The encoder only sees training edges; held-out positives are absent from
    its adjacency. Each epoch draws ``neg_ratio`` fresh negatives per training
    positive from the graph's non-edges. Returns the best-validation weights.
    """
    if graph.is_empty:
        raise TrainingError(f"graph {graph.window_end} has no edges")
    rng = np.random.default_rng(hyper.seed)
    model = GaeModel.init(graph.features.shape[1], hyper, rng)
    a_train = normalize_adjacency(adjacency_from_edges(graph.n_nodes, split.train_pos))
    ax = a_train @ graph.features
    pool = non_edges(graph.adjacency)
    n_pos = len(split.train_pos)
    n_neg = min(len(pool), hyper.neg_ratio * n_pos)
    if n_neg == 0:
        raise TrainingError("no negatives available for training")
    labels = np.concatenate([np.ones(n_pos), np.zeros(n_neg)])

    trace = TrainingTrace()
    best = (-np.inf, np.inf, model.w0.copy(), model.w1.copy())
    wait = 0
    for epoch in range(1, hyper.max_epochs + 1):
        neg = pool[rng.choice(len(pool), size=n_neg, replace=False)]
        pairs = np.concatenate([split.train_pos, neg])
        cache = gcn_forward(model.w0, model.w1, a_train, graph.features, ax)
        loss = bce_loss(labels, edge_probs(cache["z"], pairs))
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at epoch {epoch}", trace)
        try:
            adam_step(model, backward(cache, model.w1, pairs, labels))
        except TrainingError as exc:
            raise TrainingError(f"epoch {epoch}: {exc}", trace) from exc
        z = gcn_forward(model.w0, model.w1, a_train, graph.features, ax)["z"]
        val = pair_auroc(z, split.val_pos, split.val_neg)
        trace.epochs.append(epoch)
        trace.loss.append(loss)
        trace.val_auroc.append(val)
        # ties on validation AUROC (common once it saturates) go to the lower loss
        if val > best[0] or (val == best[0] and loss < best[1]):
            best = (val, loss, model.w0.copy(), model.w1.copy())
            trace.best_epoch = epoch
            wait = 0
        else:
            wait += 1
            if wait > hyper.patience:
                break

    model.w0, model.w1 = best[2], best[3]
    trace.best_val_auroc = float(best[0])
    z = gcn_forward(model.w0, model.w1, a_train, graph.features, ax)["z"]
    trace.test_auroc = pair_auroc(z, split.test_pos, split.test_neg)
    return model, trace


# -- checkpoints --------------------------------------------------------------

def save_model(model: GaeModel, path: str | Path, window_end=None) -> None:
    """Write ``<path>.json`` (header) and ``<path>.npz`` (weights)."""
    path = Path(path)
    header = {
        "dims": {"F": int(model.w0.shape[0]), "H": int(model.w0.shape[1]),
                 "K": int(model.w1.shape[1])},
        "hyper": asdict(model.hyper),
        "seed": model.hyper.seed,
        "window_end": None if window_end is None else str(window_end),
    }
    path.with_suffix(".json").write_text(json.dumps(header, sort_keys=True), encoding="utf-8")
    np.savez(path.with_suffix(".npz"), w0=model.w0, w1=model.w1)


def load_model(path: str | Path) -> GaeModel:
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    hyper = header["hyper"]
    hyper["split"] = tuple(hyper["split"])
    with np.load(path.with_suffix(".npz")) as data:
        return GaeModel(data["w0"].copy(), data["w1"].copy(), GaeHyper(**hyper))
