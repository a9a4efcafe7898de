"""Report bundle: indicator/volatility plots, the with/without-AUROC table and a summary JSON.

Everything written here is a pure function of the workspace artifacts, so
two runs with the same config and seed produce identical files.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import __version__, metrics  # noqa: E402
from .config import STAGE_KEYS  # noqa: E402
from .indicator import IndicatorSeries  # noqa: E402
from .ingest import VolSeries  # noqa: E402

logger = logging.getLogger(__name__)

PATH_KEYS = ("input", "workspace", "scenario")
SVG_META = {"Date": None, "Creator": None}


def next_day_pairs(series: IndicatorSeries, daily: VolSeries):
    """Pair each AUROC point dated ``d`` with the log-RV of the first session after ``d``.

    Returns ``(dates, auroc, next_log_rv)`` restricted to finite pairs.
    """
    nxt = np.searchsorted(daily.days, series.dates, side="right")
    ok = nxt < len(daily.days)
    a = series.auroc[ok]
    v = daily.log_rv[nxt[ok]]
    keep = np.isfinite(a) & np.isfinite(v)
    return series.dates[ok][keep], a[keep], v[keep]


def _finite_stats(x: np.ndarray) -> dict:
    x = x[np.isfinite(x)]
    if len(x) == 0:
        return {"n": 0}
    return {"n": int(len(x)), "mean": float(x.mean()), "min": float(x.min()),
            "max": float(x.max())}


def regime_contrast(series: IndicatorSeries, truth_csv: Path) -> dict:
    with truth_csv.open(encoding="utf-8", newline="") as fh:
        regime = {np.datetime64(r["day"], "D"): int(r["regime"]) for r in csv.DictReader(fh)}
    labels = np.array([regime.get(d, 0) for d in series.dates])
    a = series.auroc
    out = {}
    for name, reg in (("stable", 1), ("shifted", 2)):
        sel = a[(labels == reg) & np.isfinite(a)]
        out[f"mean_auroc_{name}"] = float(sel.mean()) if len(sel) else None
        out[f"n_{name}"] = int(len(sel))
    return out


def plot_timeseries(series: IndicatorSeries, daily: VolSeries, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(9, 3.5))
    ax.plot(series.dates.astype("datetime64[D]").astype(object), series.auroc,
            color="tab:blue", lw=1.2, label="AUROC (t+1)")
    ax.set_ylabel("AUROC", color="tab:blue")
    ax2 = ax.twinx()
    ax2.plot(daily.days.astype(object), daily.log_rv, color="tab:red", lw=1.0, label="log RV")
    ax2.set_ylabel("daily log RV", color="tab:red")
    ax.set_title("Reconstruction AUROC and log realized variance")
    fig.autofmt_xdate()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=SVG_META)
    plt.close(fig)


def plot_kde(auroc: np.ndarray, logrv: np.ndarray, rho: float, path: Path) -> None:
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.4))
    axes[0].scatter(auroc, logrv, s=10, alpha=0.7)
    axes[0].set_xlabel("AUROC (t+1)")
    axes[0].set_ylabel("next-day log RV")
    axes[0].set_title(f"Spearman rho = {rho:.3f}")
    for ax, x, label in ((axes[1], auroc, "AUROC (t+1)"), (axes[2], logrv, "next-day log RV")):
        if len(x) >= 2:
            grid, dens = metrics.kde(x)
            ax.plot(grid, dens)
            ax.fill_between(grid, dens, alpha=0.25)
        ax.set_xlabel(label)
        ax.set_ylabel("density")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=SVG_META)
    plt.close(fig)


def write_table(results: dict, path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "r2_oos_without_auroc", "r2_oos_with_auroc", "p_value",
                    "mse_difference", "n_oos"])
        for kind, r in sorted(results.items()):
            w.writerow([kind, repr(r["without_auroc"]["r2_oos"]),
                        repr(r["with_auroc"]["r2_oos"]), repr(r["p_value"]),
                        repr(r["statistic"]), r["with_auroc"]["n_oos"]])


def _clean(obj):
    """Replace NaN by None so the JSON stays strict."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def build_report(pipe, out_dir: Path, truth_csv: Path | None = None) -> dict:
    plt.rcParams["svg.hashsalt"] = "gaevol"
    cfg = pipe.cfg
    series = pipe.load_indicator()
    daily = pipe.load_vol().daily()
    _, a, v = next_day_pairs(series, daily)
    rho = metrics.spearman(a, v) if len(a) >= 3 else math.nan
    results = json.loads((pipe.ws.dir("forecast") / "results.json").read_text(encoding="utf-8"))

    plot_timeseries(series, daily, out_dir / "timeseries.svg")
    plot_kde(a, v, rho, out_dir / "kde.svg")
    write_table(results, out_dir / "table.csv")

    summary = {
        "code_version": __version__,
        "config": {k: v for k, v in cfg.scoped(tuple(
            k for keys in STAGE_KEYS.values() for k in keys)).items() if k not in PATH_KEYS},
        "config_hashes": {s: cfg.scoped_hash(k) for s, k in STAGE_KEYS.items()},
        "input_hash": pipe.ws.manifest("ingest")["input_hash"],
        "indicator": {**_finite_stats(series.auroc), "n_points": len(series),
                      "n_flagged": int(np.count_nonzero(~np.isfinite(series.auroc)))},
        "spearman_auroc_next_log_rv": {"rho": rho, "n": int(len(a))},
        "forecast": results,
    }
    if truth_csv is not None and truth_csv.is_file():
        summary["regimes"] = regime_contrast(series, truth_csv)
    summary = _clean(summary)
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                          encoding="utf-8")
    logger.info("report: spearman %.3f over %d days", rho, len(a))
    return summary
