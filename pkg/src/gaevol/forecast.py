"""HAR log-RV forecasting with and without the AUROC regressor.

Three back-ends share one dataset layout: ordinary least squares, plain
gradient-boosted regression trees and a one-hidden-layer MLP. The value of
the AUROC column is judged by a paired bootstrap over out-of-sample rows.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import metrics
from .gae import TrainingError
from .indicator import IndicatorSeries
from .ingest import VolSeries
from .optim import Adam

logger = logging.getLogger(__name__)

RIDGE_LAMBDA = 1e-8
LAG_NAMES = {1: "rv_d", 7: "rv_w", 22: "rv_m"}


# -- dataset ------------------------------------------------------------------

@dataclass(frozen=True)
class HarDataset:
    timestamps: np.ndarray  # window-end instant of each target
    days: np.ndarray  # trading day of each target
    target: np.ndarray  # log-RV
    features: np.ndarray  # rows x regressors
    names: tuple[str, ...]
    split_index: int
    dropped: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        n = len(self.target)
        if self.features.shape != (n, len(self.names)):
            raise ValueError("feature matrix does not match rows and names")
        if not 0 < self.split_index <= n:
            raise ValueError("split index out of range")
        if n > 1 and np.any(np.diff(self.timestamps) <= np.timedelta64(0, "s")):
            raise ValueError("rows must be chronologically ordered")

    def __len__(self) -> int:
        return len(self.target)

    @property
    def n_train(self) -> int:
        return self.split_index

    @property
    def n_oos(self) -> int:
        return len(self.target) - self.split_index

    def column(self, name: str) -> np.ndarray:
        return self.features[:, self.names.index(name)]

    def without(self, name: str) -> HarDataset:
        keep = [i for i, n in enumerate(self.names) if n != name]
        return replace(self, features=self.features[:, keep],
                       names=tuple(self.names[i] for i in keep))

    def parts(self):
        s = self.split_index
        return self.features[:s], self.target[:s], self.features[s:], self.target[s:]


def lag_name(lag: int) -> str:
    return LAG_NAMES.get(lag, f"rv_{lag}")


def build_har_dataset(vol: VolSeries, indicator: IndicatorSeries | None = None,
                      lags: tuple[int, ...] = (1, 7), oos_fraction: float = 0.25) -> HarDataset:
    """One row per target window of ``vol``.

    Lag ``L`` is the mean daily log-RV over the ``L`` sessions before the
    target's session; the daily series is the per-session sum of window RVs.
    The AUROC regressor is the latest indicator point dated strictly before
    the target's session. Rows with insufficient history, a flagged target,
    a flagged regressor or a flagged AUROC are dropped and counted.
    """
    if not lags or min(lags) < 1:
        raise ValueError("lags must be positive session counts")
    if not 0.0 < oos_fraction < 1.0:
        raise ValueError("oos_fraction must lie in (0, 1)")
    daily = vol.daily()
    session_of = np.searchsorted(daily.days, vol.days)
    csum = np.concatenate([[0.0], np.cumsum(np.nan_to_num(daily.log_rv))])
    nflag = np.concatenate([[0], np.cumsum(daily.flagged)])
    longest = max(lags)

    if indicator is not None and len(indicator):
        ind_dates = indicator.dates
        ind_vals = indicator.auroc
    counts = {"history": 0, "target_flagged": 0, "regressor_flagged": 0,
              "auroc_missing": 0, "auroc_flagged": 0}
    keep, rows = [], []
    for i, j in enumerate(session_of):
        if j < longest:
            counts["history"] += 1
            continue
        if vol.flagged[i]:
            counts["target_flagged"] += 1
            continue
        if any(nflag[j] - nflag[j - lag] for lag in lags):
            counts["regressor_flagged"] += 1
            continue
        row = [(csum[j] - csum[j - lag]) / lag for lag in lags]
        if indicator is not None:
            k = np.searchsorted(ind_dates, vol.days[i], side="left") - 1 if len(indicator) else -1
            if k < 0:
                counts["auroc_missing"] += 1
                continue
            if not math.isfinite(ind_vals[k]):
                counts["auroc_flagged"] += 1
                continue
            row.append(ind_vals[k])
        keep.append(i)
        rows.append(row)
    dropped = {k: v for k, v in counts.items() if v}
    if dropped:
        logger.info("har dataset: dropped rows %s", dropped)
    n = len(keep)
    if n < 2:
        raise ValueError(f"only {n} usable rows after alignment (dropped {dropped})")
    n_oos = max(1, int(round(oos_fraction * n)))
    if n_oos >= n:
        raise ValueError("no training rows left after the out-of-sample cut")
    names = tuple(lag_name(lag) for lag in lags) + (("auroc",) if indicator is not None else ())
    keep = np.asarray(keep)
    return HarDataset(vol.timestamps[keep], vol.days[keep], vol.log_rv[keep],
                      np.asarray(rows, dtype=float).reshape(n, len(names)), names,
                      n - n_oos, dropped)


# -- results ------------------------------------------------------------------

@dataclass(frozen=True)
class ForecastResult:
    model_kind: str
    with_auroc: bool
    r2_oos: float
    mse_oos: float
    predictions: np.ndarray  # aligned with out-of-sample rows
    actual: np.ndarray
    fitted_params: dict
    n_train: int
    ridge: bool = False

    @property
    def n_oos(self) -> int:
        return len(self.actual)

    @property
    def squared_errors(self) -> np.ndarray:
        return (self.actual - self.predictions) ** 2

    def summary(self) -> dict:
        return {"r2_oos": self.r2_oos, "mse_oos": self.mse_oos,
                "n_train": self.n_train, "n_oos": self.n_oos}


def _result(kind, data, predict, params, ridge=False) -> ForecastResult:
    _, _, x_te, y_te = data.parts()
    pred = np.asarray(predict(x_te), dtype=float)
    r2 = metrics.r_squared(y_te, pred) if len(y_te) > 1 else math.nan
    return ForecastResult(kind, "auroc" in data.names, r2, float(np.mean((y_te - pred) ** 2)),
                          pred, y_te.copy(), params, data.n_train, ridge)


# -- linear -------------------------------------------------------------------

def ols_coefficients(x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray, bool]:
    """Intercept and slopes via centred normal equations; ridge on rank deficiency.

    Constant columns carry no information and get an exact zero slope.
    """
    p = x.shape[1]
    beta = np.zeros(p)
    live = np.ptp(x, axis=0) > 0 if len(x) else np.zeros(p, dtype=bool)
    xl = x[:, live]
    xm, ym = xl.mean(axis=0), y.mean()
    xc, yc = xl - xm, y - ym
    ridge = bool(live.any() and np.linalg.matrix_rank(xc) < xc.shape[1])
    if live.any():
        gram = xc.T @ xc
        if ridge:
            gram = gram + RIDGE_LAMBDA * np.eye(xc.shape[1])
        beta[live] = np.linalg.solve(gram, xc.T @ yc)
    return float(ym - xm @ beta[live]), beta, ridge


def fit_linear(data: HarDataset) -> ForecastResult:
    x_tr, y_tr, _, _ = data.parts()
    if len(y_tr) < data.features.shape[1] + 2:
        raise ValueError("too few training rows for the linear model")
    b0, beta, ridge = ols_coefficients(x_tr, y_tr)
    if ridge:
        logger.warning("linear fit: rank-deficient design, ridge fallback (lambda=%g)",
                       RIDGE_LAMBDA)
    params = {"intercept": b0, **{n: float(b) for n, b in zip(data.names, beta)}}
    used = beta != 0  # zero slopes are skipped so they cannot perturb rounding
    return _result("linear", data, lambda x: b0 + x[:, used] @ beta[used], params, ridge)


# -- gradient-boosted trees -----------------------------------------------------

@dataclass(frozen=True)
class TreeHyper:
    n_rounds: int = 100
    max_depth: int = 3
    shrinkage: float = 0.1
    min_leaf: int = 1
    seed: int = 0  # recorded only; the exact greedy fit uses no randomness


class RegressionTree:
    """Depth-limited least-squares tree stored as flat node arrays."""

    def __init__(self, max_depth: int, min_leaf: int = 1):
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []

    def _node(self, value: float) -> int:
        for lst, v in ((self.feature, -1), (self.threshold, 0.0), (self.left, -1),
                       (self.right, -1), (self.value, value)):
            lst.append(v)
        return len(self.value) - 1

    def _best_split(self, x, g):
        n = len(g)
        total = g.sum()
        best = (0.0, -1, 0.0)
        for f in range(x.shape[1]):
            order = np.argsort(x[:, f], kind="stable")
            xs, gs = x[order, f], g[order]
            left = np.cumsum(gs)[:-1]
            n_left = np.arange(1, n)
            gain = left ** 2 / n_left + (total - left) ** 2 / (n - n_left) - total ** 2 / n
            ok = (xs[1:] > xs[:-1]) & (n_left >= self.min_leaf) & (n - n_left >= self.min_leaf)
            if not ok.any():
                continue
            gain = np.where(ok, gain, -np.inf)
            k = int(np.argmax(gain))
            if gain[k] > best[0] + 1e-15:
                best = (float(gain[k]), f, 0.5 * (xs[k] + xs[k + 1]))
        return best

    def fit(self, x: np.ndarray, g: np.ndarray) -> RegressionTree:
        self._grow(x, g, 0)
        return self

    def _grow(self, x, g, depth) -> int:
        node = self._node(float(g.mean()))
        if depth >= self.max_depth or len(g) < 2 * self.min_leaf:
            return node
        gain, f, thr = self._best_split(x, g)
        if f < 0:
            return node
        mask = x[:, f] <= thr
        self.feature[node], self.threshold[node] = f, thr
        self.left[node] = self._grow(x[mask], g[mask], depth + 1)
        self.right[node] = self._grow(x[~mask], g[~mask], depth + 1)
        return node

    def predict(self, x: np.ndarray) -> np.ndarray:
        out = np.empty(len(x))
        for i, row in enumerate(x):
            node = 0
            while self.feature[node] >= 0:
                node = self.left[node] if row[self.feature[node]] <= self.threshold[node] \
                    else self.right[node]
            out[i] = self.value[node]
        return out


@dataclass
class BoostedTrees:
    base: float
    shrinkage: float
    trees: list[RegressionTree]

    def predict(self, x: np.ndarray) -> np.ndarray:
        out = np.full(len(x), self.base)
        for t in self.trees:
            out += self.shrinkage * t.predict(x)
        return out


def boost(x: np.ndarray, y: np.ndarray, hyper: TreeHyper = TreeHyper()) -> BoostedTrees:
    model = BoostedTrees(float(y.mean()), hyper.shrinkage, [])
    pred = np.full(len(y), model.base)
    for _ in range(hyper.n_rounds):
        tree = RegressionTree(hyper.max_depth, hyper.min_leaf).fit(x, y - pred)
        model.trees.append(tree)
        pred += hyper.shrinkage * tree.predict(x)
    return model


def fit_tree(data: HarDataset, hyper: TreeHyper = TreeHyper()) -> ForecastResult:
    x_tr, y_tr, _, _ = data.parts()
    if len(y_tr) < 20:
        raise ValueError("tree back-end needs at least 20 training rows")
    model = boost(x_tr, y_tr, hyper)
    params = {"n_rounds": hyper.n_rounds, "max_depth": hyper.max_depth,
              "shrinkage": hyper.shrinkage, "base_score": model.base,
              "n_nodes": sum(len(t.value) for t in model.trees)}
    return _result("tree", data, model.predict, params)


# -- MLP ------------------------------------------------------------------------

@dataclass(frozen=True)
class MlpHyper:
    width: int = 32
    lr: float = 0.01
    max_epochs: int = 500
    patience: int = 30
    val_fraction: float = 0.2
    seed: int = 0


def mlp_init(n_in: int, width: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    # zero output layer: a constant target leaves the network constant
    return {"w1": rng.normal(0.0, math.sqrt(2.0 / max(n_in, 1)), (n_in, width)),
            "b1": np.zeros(width), "w2": np.zeros(width), "b2": np.zeros(1)}


def mlp_predict(p: dict[str, np.ndarray], x: np.ndarray) -> np.ndarray:
    return np.maximum(x @ p["w1"] + p["b1"], 0.0) @ p["w2"] + p["b2"][0]


def mlp_loss_and_grad(p: dict[str, np.ndarray], x: np.ndarray, y: np.ndarray):
    """Mean squared error and its gradient with respect to every parameter."""
    pre = x @ p["w1"] + p["b1"]
    h = np.maximum(pre, 0.0)
    err = h @ p["w2"] + p["b2"][0] - y
    loss = float(np.mean(err ** 2))
    g_out = 2.0 * err / len(y)
    g_h = np.outer(g_out, p["w2"]) * (pre > 0)
    return loss, {"w1": x.T @ g_h, "b1": g_h.sum(axis=0), "w2": h.T @ g_out,
                  "b2": np.array([g_out.sum()])}


def _standardizer(a: np.ndarray):
    mu = a.mean(axis=0)
    sd = a.std(axis=0)
    return mu, np.where(sd > 0, sd, 1.0)


def fit_mlp(data: HarDataset, hyper: MlpHyper = MlpHyper()) -> ForecastResult:
    x_tr, y_tr, _, _ = data.parts()
    if len(y_tr) < 20:
        raise ValueError("MLP back-end needs at least 20 training rows")
    xm, xs = _standardizer(x_tr)
    ym, ys = _standardizer(y_tr)
    xz, yz = (x_tr - xm) / xs, (y_tr - ym) / ys
    n_val = max(1, int(round(hyper.val_fraction * len(yz))))
    fit_x, fit_y, val_x, val_y = xz[:-n_val], yz[:-n_val], xz[-n_val:], yz[-n_val:]

    params = mlp_init(xz.shape[1], hyper.width, np.random.default_rng(hyper.seed))
    opt = Adam(lr=hyper.lr)
    best = (math.inf, {k: v.copy() for k, v in params.items()}, 0)
    losses, wait = [], 0
    for epoch in range(1, hyper.max_epochs + 1):
        loss, grads = mlp_loss_and_grad(params, fit_x, fit_y)
        losses.append(loss)
        if not math.isfinite(loss):
            raise TrainingError(f"MLP diverged at epoch {epoch}", losses)
        try:
            opt.step(params, grads)
        except FloatingPointError as exc:
            raise TrainingError(str(exc), losses) from exc
        val = float(np.mean((mlp_predict(params, val_x) - val_y) ** 2))
        if val < best[0]:
            best, wait = (val, {k: v.copy() for k, v in params.items()}, epoch), 0
        else:
            wait += 1
            if wait > hyper.patience:
                break
    params = best[1]

    def predict(x):
        return mlp_predict(params, (x - xm) / xs) * ys[()] + ym[()]

    info = {"width": hyper.width, "epochs": len(losses), "best_epoch": best[2],
            "val_mse": best[0], "final_train_mse": losses[-1]}
    return _result("mlp", data, predict, info)


# -- comparison -------------------------------------------------------------------

FITTERS = {"linear": lambda d, h: fit_linear(d),
           "tree": lambda d, h: fit_tree(d, h or TreeHyper()),
           "mlp": lambda d, h: fit_mlp(d, h or MlpHyper())}


def fit(data: HarDataset, model_kind: str, hyper=None) -> ForecastResult:
    if model_kind not in FITTERS:
        raise ValueError(f"unknown model kind {model_kind!r}")
    return FITTERS[model_kind](data, hyper)


@dataclass(frozen=True)
class BootstrapReport:
    p_value: float
    statistic: float  # MSE_without - MSE_with on out-of-sample rows
    r2_difference: float
    n_resamples: int
    seed: int


@dataclass(frozen=True)
class Comparison:
    with_auroc: ForecastResult
    without_auroc: ForecastResult
    report: BootstrapReport


def paired_bootstrap(se_without: np.ndarray, se_with: np.ndarray, n_resamples: int = 1000,
                     seed: int = 0) -> tuple[float, float]:
    """One-sided p-value that adding the regressor does not lower the MSE.

    Returns ``(p_value, observed)`` with ``p = (#{stat* <= 0} + 1) / (B + 1)``.
    """
    diff = np.asarray(se_without, dtype=float) - np.asarray(se_with, dtype=float)
    if len(diff) == 0:
        raise ValueError("no out-of-sample rows to resample")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(diff), size=(n_resamples, len(diff)))
    stats = diff[idx].mean(axis=1)
    return float((np.count_nonzero(stats <= 0) + 1) / (n_resamples + 1)), float(diff.mean())


def compare_with_without(data: HarDataset, model_kind: str = "linear", n_resamples: int = 1000,
                         seed: int = 0, hyper=None) -> Comparison:
    if "auroc" not in data.names:
        raise ValueError("dataset has no auroc column")
    if data.n_oos == 0:
        raise ValueError("no out-of-sample rows")
    with_ = fit(data, model_kind, hyper)
    without = fit(data.without("auroc"), model_kind, hyper)
    p, stat = paired_bootstrap(without.squared_errors, with_.squared_errors, n_resamples, seed)
    return Comparison(with_, without,
                      BootstrapReport(p, stat, with_.r2_oos - without.r2_oos, n_resamples, seed))


def comparisons_to_dict(comps: dict[str, Comparison]) -> dict:
    out = {}
    for kind, c in sorted(comps.items()):
        out[kind] = {"with_auroc": c.with_auroc.summary(),
                     "without_auroc": c.without_auroc.summary(),
                     "p_value": c.report.p_value, "statistic": c.report.statistic,
                     "r2_difference": c.report.r2_difference,
                     "n_resamples": c.report.n_resamples, "seed": c.report.seed}
    return out


def write_results(comps: dict[str, Comparison], path: str | Path) -> None:
    Path(path).write_text(json.dumps(comparisons_to_dict(comps), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def write_predictions(data: HarDataset, comps: dict[str, Comparison], path: str | Path) -> None:
    s = data.split_index
    kinds = sorted(comps)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "actual"] + [f"{k}_{v}" for k in kinds
                                              for v in ("with_auroc", "without_auroc")])
        for i, ts in enumerate(np.datetime_as_string(data.timestamps[s:], unit="s")):
            row = [ts, repr(float(data.target[s + i]))]
            for k in kinds:
                row += [repr(float(comps[k].with_auroc.predictions[i])),
                        repr(float(comps[k].without_auroc.predictions[i]))]
            w.writerow(row)
