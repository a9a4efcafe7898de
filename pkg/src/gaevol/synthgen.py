"""Synthetic sector factor-model market with plantable regime shifts.

Per bar, returns are ``r = L f + e`` with Gaussian factors (one market
factor, one per sector, plus ``extra_factors`` latent ones) and Gaussian
idiosyncratic noise. Regime 1 uses a block loading matrix: each ticker loads
on its own sector and, with ``market_loading[0]``, on the market. In regime 2
a fraction of tickers have their sector loadings scrambled into random
directions over all sector and latent factors, while the market loading moves
to ``market_loading[1]``; the correlation graph loses its block structure. The
scramble is redrawn every ``scramble_period`` days (0 = once per episode).

With ``match_index_vol`` each day is rescaled so that the expected variance
of the equal-weighted index equals the stable regime's, so the structural
shift by itself leaves index volatility unchanged.

Volatility can be coupled to the regime: days whose regime ``vol_lag_days``
earlier was 2 have all returns scaled by ``vol_multiplier``, so graph
heterogeneity leads volatility. A day-level log-normal shock adds
unpredictable volatility on top.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ingest import PricePanel, VolSeries, log_returns, realized_volatility

STABLE, SHIFTED = 1, 2


@dataclass(frozen=True)
class Scenario:
    n_tickers: int = 60
    n_sectors: int = 4
    days: int = 120
    bars_per_day: int = 390
    # per-bar volatilities, indexed by regime id (1, 2)
    factor_vol: tuple[float, float] = (1e-3, 1e-3)
    idio_vol: tuple[float, float] = (4e-4, 4e-4)
    in_loading: float = 1.0
    cross_loading: float = 0.0
    market_loading: tuple[float, float] = (0.5, 1.5)
    extra_factors: int = 40
    # two shift episodes: one inside the HAR training rows, one in the out-of-sample tail
    schedule: tuple[tuple[int, int], ...] = ((0, STABLE), (22, SHIFTED), (55, STABLE),
                                             (80, SHIFTED))
    scramble_fraction: float = 1.0
    scramble_period: int = 0  # days between loading redraws; 0 = once per episode
    match_index_vol: bool = True
    vol_multiplier: float = 1.0
    vol_lag_days: int = 19
    daily_vol_noise: float = 0.0
    seed: int = 0
    start_date: str = "2021-01-04"
    bar_minutes: int = 1

    def __post_init__(self) -> None:
        starts = [s for s, _ in self.schedule]
        if not starts or starts[0] != 0 or any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("schedule must start at day 0 with strictly increasing start days")
        if starts[-1] >= self.days:
            raise ValueError("schedule entry starts after the last day")
        if any(r not in (STABLE, SHIFTED) for _, r in self.schedule):
            raise ValueError("regime ids must be 1 or 2")
        if not 0.0 <= self.scramble_fraction <= 1.0:
            raise ValueError("scramble_fraction must lie in [0, 1]")
        if min(self.factor_vol) <= 0 or min(self.idio_vol) < 0 or self.vol_multiplier <= 0:
            raise ValueError("volatilities must be positive")
        if self.n_sectors < 1 or self.n_tickers < self.n_sectors:
            raise ValueError("need at least one ticker per sector")

    def replace(self, **kw) -> Scenario:
        return dataclasses.replace(self, **kw)

    def regimes(self) -> np.ndarray:
        """Regime id for each day."""
        out = np.empty(self.days, dtype=int)
        bounds = [s for s, _ in self.schedule] + [self.days]
        for (start, regime), end in zip(self.schedule, bounds[1:]):
            out[start:end] = regime
        return out

    def vol_scale(self) -> np.ndarray:
        """Deterministic per-day volatility multiplier from the lagged regime."""
        lagged = np.full(self.days, STABLE)
        lag = self.vol_lag_days
        lagged[lag:] = self.regimes()[: self.days - lag]
        return np.where(lagged == SHIFTED, self.vol_multiplier, 1.0)


@dataclass(frozen=True)
class GroundTruth:
    regimes: np.ndarray  # per day
    sectors: np.ndarray  # per ticker
    true_rv: np.ndarray  # expected index realized variance per day
    days: np.ndarray  # datetime64[D]

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["day", "regime", "true_rv"])
            for d, r, v in zip(np.datetime_as_string(self.days, unit="D"), self.regimes,
                               self.true_rv):
                w.writerow([d, int(r), repr(float(v))])


@dataclass(frozen=True)
class SynthMarket:
    panel: PricePanel
    truth: GroundTruth
    scenario: Scenario = field(repr=False)


def trading_days(start: str, n: int) -> np.ndarray:
    return np.busday_offset(np.datetime64(start, "D"), np.arange(n), roll="forward")


def block_loadings(sc: Scenario, regime: int = STABLE) -> tuple[np.ndarray, np.ndarray]:
    """Loadings on ``[market, sector_1..sector_K, latent_1..latent_E]`` and sector ids."""
    sectors = np.arange(sc.n_tickers) * sc.n_sectors // sc.n_tickers
    load = np.zeros((sc.n_tickers, 1 + sc.n_sectors + sc.extra_factors))
    load[:, 0] = sc.market_loading[regime - 1]
    load[:, 1:1 + sc.n_sectors] = sc.cross_loading
    load[np.arange(sc.n_tickers), 1 + sectors] = sc.in_loading
    return load, sectors


def _scrambled(base: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Replace the non-market part of a ``fraction`` of rows by random directions of equal norm."""
    out = base.copy()
    n, k = base.shape
    picked = np.sort(rng.choice(n, size=int(round(fraction * n)), replace=False))
    g = rng.standard_normal((len(picked), k - 1))
    g *= (np.linalg.norm(base[picked, 1:], axis=1) / np.linalg.norm(g, axis=1))[:, None]
    out[picked, 1:] = g
    return out


def _index_var(load: np.ndarray, fv: float, iv: float) -> float:
    lw = load.mean(axis=0)
    return fv ** 2 * float(lw @ lw) + iv ** 2 / len(load)


def generate(sc: Scenario) -> SynthMarket:
    """Simulate the scenario; same seed gives a bit-identical market."""
    rng = np.random.default_rng(sc.seed)
    base, sectors = block_loadings(sc, STABLE)
    shifted_base, _ = block_loadings(sc, SHIFTED)
    target_var = _index_var(base, sc.factor_vol[0], sc.idio_vol[0])
    regimes = sc.regimes()
    scale = sc.vol_scale()
    if sc.daily_vol_noise > 0:
        scale = scale * np.exp(sc.daily_vol_noise * rng.standard_normal(sc.days))
    else:
        rng.standard_normal(sc.days)  # keep the stream aligned across settings
    episode_load = None
    age = 0
    bars = sc.bars_per_day
    r = np.empty((sc.n_tickers, sc.days * bars))
    true_rv = np.empty(sc.days)
    for d in range(sc.days):
        reg = regimes[d]
        if reg == SHIFTED:
            if episode_load is None or (sc.scramble_period and age % sc.scramble_period == 0):
                episode_load = _scrambled(shifted_base, sc.scramble_fraction, rng)
            load = episode_load
            age += 1
        else:
            episode_load = None
            age = 0
            load = base
        fv, iv = sc.factor_vol[reg - 1], sc.idio_vol[reg - 1]
        day_var = _index_var(load, fv, iv)
        k = scale[d] * (np.sqrt(target_var / day_var) if sc.match_index_vol else 1.0)
        f = rng.standard_normal((load.shape[1], bars)) * fv
        e = rng.standard_normal((sc.n_tickers, bars)) * iv
        r[:, d * bars:(d + 1) * bars] = k * (load @ f + e)
        true_rv[d] = bars * k ** 2 * day_var

    days = trading_days(sc.start_date, sc.days)
    step = np.timedelta64(sc.bar_minutes * 60, "s")
    first = np.timedelta64(9 * 3600 + 30 * 60, "s")  # 09:30 open, bars end at 09:31...
    offsets = first + np.arange(bars + 1) * step
    stamps = (days.astype("datetime64[s]")[:, None] + offsets[None, :]).ravel()
    # one opening price per session plus one per bar; overnight return is zero
    logp = np.empty((sc.n_tickers, sc.days * (bars + 1)))
    level = np.full(sc.n_tickers, np.log(100.0))
    for d in range(sc.days):
        block = r[:, d * bars:(d + 1) * bars]
        path = level[:, None] + np.concatenate(
            [np.zeros((sc.n_tickers, 1)), np.cumsum(block, axis=1)], axis=1)
        logp[:, d * (bars + 1):(d + 1) * (bars + 1)] = path
        level = path[:, -1]
    tickers = tuple(f"S{s}T{i:03d}" for i, s in enumerate(sectors))
    panel = PricePanel(tickers, stamps, np.exp(logp), step)
    return SynthMarket(panel, GroundTruth(regimes, sectors, true_rv, days), sc)


def coupled(sc: Scenario, coupling: float) -> Scenario:
    """Scenario whose volatility on (lagged) shifted days is ``1 + coupling`` times larger."""
    if coupling < 0:
        raise ValueError("coupling must be non-negative")
    return sc.replace(vol_multiplier=1.0 + coupling)


def planted_auroc_signal(sc: Scenario, coupling: float, horizon=None) -> VolSeries:
    """Index realized variance of the coupled scenario.

    With ``coupling = c`` the shifted-regime days (lagged by ``vol_lag_days``)
    carry ``(1 + c)**2`` times the variance of stable days.
    """
    market = generate(coupled(sc, coupling))
    return realized_volatility(log_returns(market.panel), horizon)


# -- scenario files -----------------------------------------------------------

def _coerce(name: str, text: str):
    default = getattr(Scenario(), name)
    if name == "schedule":
        pairs = []
        for chunk in text.split(";"):
            if chunk.strip():
                start, reg = chunk.split(":")
                pairs.append((int(start), int(reg)))
        return tuple(pairs)
    if isinstance(default, tuple):
        return tuple(float(x) for x in text.split(","))
    if isinstance(default, bool):
        return text.strip().lower() in {"1", "true", "yes", "on"}
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text.strip()


def scenario_from_mapping(values: dict[str, str]) -> Scenario:
    """Build a scenario from flat ``key -> text`` pairs (unknown keys rejected)."""
    names = {f.name for f in dataclasses.fields(Scenario)}
    unknown = set(values) - names
    if unknown:
        raise KeyError(f"unknown scenario keys: {sorted(unknown)}")
    return Scenario(**{k: _coerce(k, v) for k, v in values.items()})
