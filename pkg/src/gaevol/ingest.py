"""Price loading, log returns and realized volatility.

Prices arrive as a CSV panel (wide or long layout), are validated and aligned
onto a regular intraday grid, then turned into per-bar log returns. Realized
variance is the sum of squared equal-weighted index returns over fixed-size
windows inside each trading session.
"""

from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass, field
from datetime import datetime, time
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)


class IngestError(ValueError):
    """Raised for malformed or invalid price input."""


def parse_duration(value: str | np.timedelta64 | int) -> np.timedelta64:
    """Parse ``"1min"``, ``"5m"``, ``"1h"``, ``"30s"``, ``"1d"`` into a timedelta64[s].

    Integers are read as minutes.
    """
    if isinstance(value, np.timedelta64):
        return value.astype("timedelta64[s]")
    if isinstance(value, (int, np.integer)):
        return np.timedelta64(int(value) * 60, "s")
    m = re.fullmatch(r"\s*(\d+)\s*(s|sec|m|min|h|hour|d|day)s?\s*", str(value).lower())
    if not m:
        raise IngestError(f"cannot parse duration {value!r}")
    n = int(m.group(1))
    unit = {"s": 1, "sec": 1, "m": 60, "min": 60, "h": 3600, "hour": 3600,
            "d": 86400, "day": 86400}[m.group(2)]
    return np.timedelta64(n * unit, "s")


def _parse_timestamp(text: str, line: int) -> datetime:
    try:
        ts = datetime.fromisoformat(text.strip().replace("Z", "+00:00"))
    except ValueError as exc:
        raise IngestError(f"line {line}: bad timestamp {text!r}") from exc
    return ts


def _session_dates(timestamps: np.ndarray) -> np.ndarray:
    return timestamps.astype("datetime64[D]")


@dataclass(frozen=True)
class PricePanel:
    """Aligned bar prices, ``prices[n, t]`` for ticker ``n`` at bar ``t``."""

    tickers: tuple[str, ...]
    timestamps: np.ndarray  # datetime64[s], length T
    prices: np.ndarray  # N x T
    bar_interval: np.timedelta64

    def __post_init__(self) -> None:
        prices = np.asarray(self.prices, dtype=float)
        ts = np.asarray(self.timestamps).astype("datetime64[s]")
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "tickers", tuple(self.tickers))
        if prices.ndim != 2 or prices.shape != (len(self.tickers), len(ts)):
            raise IngestError(
                f"prices shape {prices.shape} does not match "
                f"{len(self.tickers)} tickers x {len(ts)} timestamps"
            )
        if len(ts) > 1 and np.any(np.diff(ts) <= np.timedelta64(0, "s")):
            raise IngestError("timestamps must be strictly increasing")
        if not np.all(np.isfinite(prices)):
            raise IngestError("prices contain missing or non-finite values")
        if np.any(prices <= 0):
            n, t = np.argwhere(prices <= 0)[0]
            raise IngestError(
                f"non-positive price for {self.tickers[n]} at {ts[t]}"
            )
        prices.setflags(write=False)
        ts.setflags(write=False)

    @property
    def n_tickers(self) -> int:
        return len(self.tickers)

    @property
    def n_bars(self) -> int:
        return len(self.timestamps)

    @property
    def sessions(self) -> np.ndarray:
        return _session_dates(self.timestamps)

    def to_csv(self, path: str | Path) -> None:
        """Write the panel in wide layout: ``timestamp,TICKER1,...``."""
        path = Path(path)
        stamps = np.datetime_as_string(self.timestamps, unit="s")
        with path.open("w", encoding="utf-8", newline="") as fh:
            fh.write("timestamp," + ",".join(self.tickers) + "\n")
            body = self.prices.T
            for i, stamp in enumerate(stamps):
                fh.write(stamp + "," + ",".join(repr(float(p)) for p in body[i]) + "\n")


@dataclass(frozen=True)
class ReturnMatrix:
    """Per-bar log returns, ``returns[n, j]`` ending at ``timestamps[j]``."""

    tickers: tuple[str, ...]
    timestamps: np.ndarray
    returns: np.ndarray
    bar_interval: np.timedelta64

    def __post_init__(self) -> None:
        r = np.asarray(self.returns, dtype=float)
        if not np.all(np.isfinite(r)):
            raise IngestError("returns must be finite")
        r.setflags(write=False)
        object.__setattr__(self, "returns", r)

    @property
    def sessions(self) -> np.ndarray:
        """Trading day of each return column."""
        return _session_dates(self.timestamps)

    @property
    def days(self) -> np.ndarray:
        """Distinct trading days, ascending."""
        return np.unique(self.sessions)

    def day_slice(self, first: np.datetime64, last: np.datetime64) -> np.ndarray:
        """Boolean column mask for days in ``[first, last]``."""
        s = self.sessions
        return (s >= first) & (s <= last)

    def permuted(self, order: np.ndarray) -> ReturnMatrix:
        order = np.asarray(order)
        return ReturnMatrix(
            tuple(self.tickers[i] for i in order), self.timestamps,
            self.returns[order], self.bar_interval,
        )


@dataclass(frozen=True)
class VolSeries:
    """Realized variance per window. ``log_rv`` is NaN where ``flagged``."""

    timestamps: np.ndarray  # window-end instants
    days: np.ndarray  # trading day of each window
    rv: np.ndarray
    horizon: int | None  # bars per window, None = whole session
    log_rv: np.ndarray = field(init=False)
    flagged: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        rv = np.asarray(self.rv, dtype=float)
        if np.any(rv < 0):
            raise IngestError("realized variance must be non-negative")
        flagged = rv <= 0
        with np.errstate(divide="ignore"):
            log_rv = np.where(flagged, np.nan, np.log(np.where(flagged, 1.0, rv)))
        object.__setattr__(self, "rv", rv)
        object.__setattr__(self, "log_rv", log_rv)
        object.__setattr__(self, "flagged", flagged)

    def __len__(self) -> int:
        return len(self.rv)

    def daily(self) -> VolSeries:
        """Aggregate windows to one realized variance per trading day."""
        days, inverse = np.unique(self.days, return_inverse=True)
        rv = np.zeros(len(days))
        np.add.at(rv, inverse, self.rv)
        last = np.zeros(len(days), dtype=int)
        np.maximum.at(last, inverse, np.arange(len(self.rv)))
        return VolSeries(self.timestamps[last], days, rv, None)

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["timestamp", "day", "rv", "log_rv", "flag"])
            for ts, d, rv, lrv, fl in zip(
                np.datetime_as_string(self.timestamps, unit="s"),
                np.datetime_as_string(self.days, unit="D"),
                self.rv, self.log_rv, self.flagged,
            ):
                w.writerow([ts, d, repr(float(rv)), "" if fl else repr(float(lrv)),
                            "zero_rv" if fl else ""])

    @classmethod
    def from_csv(cls, path: str | Path, horizon: int | None = None) -> VolSeries:
        ts, days, rv = [], [], []
        with Path(path).open(encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                ts.append(np.datetime64(row["timestamp"], "s"))
                days.append(np.datetime64(row["day"], "D"))
                rv.append(float(row["rv"]))
        return cls(np.array(ts, dtype="datetime64[s]"),
                   np.array(days, dtype="datetime64[D]"), np.array(rv), horizon)


@dataclass
class IngestConfig:
    layout: str = "wide"  # "wide" or "long"
    timestamp_column: str = "timestamp"
    ticker_column: str = "ticker"
    price_column: str = "price"
    bar_interval: str | None = None  # inferred when None
    min_coverage: float = 0.95
    sessions: str | None = None  # "HH:MM-HH:MM" inclusive bar-end filter
    include_overnight: bool = False


def _parse_session_hours(spec: str) -> tuple[time, time]:
    m = re.fullmatch(r"\s*(\d{1,2}:\d{2})\s*-\s*(\d{1,2}:\d{2})\s*", spec)
    if not m:
        raise IngestError(f"bad sessions spec {spec!r}, expected HH:MM-HH:MM")
    return time.fromisoformat(m.group(1).zfill(5)), time.fromisoformat(m.group(2).zfill(5))


def _read_rows(path: Path, cfg: IngestConfig) -> tuple[list[datetime], list[str], dict]:
    """Return (timestamps, tickers, {(ts_index, ticker_index): price})."""
    values: dict[tuple[int, int], float] = {}
    stamp_index: dict[datetime, int] = {}
    stamps: list[datetime] = []
    tickers: list[str] = []
    ticker_index: dict[str, int] = {}

    def stamp_id(ts: datetime) -> int:
        if ts not in stamp_index:
            stamp_index[ts] = len(stamps)
            stamps.append(ts)
        return stamp_index[ts]

    def price(text: str, line: int, ticker: str, ts: datetime) -> float | None:
        text = text.strip()
        if text == "" or text.lower() in {"nan", "na", "null"}:
            return None
        try:
            p = float(text)
        except ValueError as exc:
            raise IngestError(f"line {line}: bad price {text!r} for {ticker}") from exc
        if not math.isfinite(p) or p <= 0:
            raise IngestError(
                f"line {line}: non-positive price {text!r} for {ticker} at {ts.isoformat()}"
            )
        return p

    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if cfg.timestamp_column not in header:
            raise IngestError(f"{path}: missing column {cfg.timestamp_column!r}")
        ts_col = header.index(cfg.timestamp_column)
        if cfg.layout == "wide":
            cols = [i for i in range(len(header)) if i != ts_col]
            for i in cols:
                ticker_index[header[i]] = len(tickers)
                tickers.append(header[i])
            for line, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise IngestError(
                        f"line {line}: expected {len(header)} fields, got {len(row)}"
                    )
                ts = _parse_timestamp(row[ts_col], line)
                t = stamp_id(ts)
                for i in cols:
                    p = price(row[i], line, header[i], ts)
                    if p is not None:
                        values[(t, ticker_index[header[i]])] = p
        elif cfg.layout == "long":
            for name in (cfg.ticker_column, cfg.price_column):
                if name not in header:
                    raise IngestError(f"{path}: missing column {name!r}")
            tk_col, px_col = header.index(cfg.ticker_column), header.index(cfg.price_column)
            for line, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise IngestError(
                        f"line {line}: expected {len(header)} fields, got {len(row)}"
                    )
                ts = _parse_timestamp(row[ts_col], line)
                ticker = row[tk_col].strip()
                if ticker not in ticker_index:
                    ticker_index[ticker] = len(tickers)
                    tickers.append(ticker)
                p = price(row[px_col], line, ticker, ts)
                if p is not None:
                    values[(stamp_id(ts), ticker_index[ticker])] = p
        else:
            raise IngestError(f"unknown layout {cfg.layout!r}")
    return stamps, tickers, values


def load_price_csv(path: str | Path, cfg: IngestConfig | None = None) -> PricePanel:
    """Load a price CSV into a validated, gap-filled :class:`PricePanel`.

    Bars are re-gridded at ``bar_interval`` between each session's first and
    last observed bar. Tickers observed on fewer than ``min_coverage`` of the
    grid bars are dropped (and logged); remaining gaps are forward-filled,
    with leading gaps back-filled from the first observation.
    """
    cfg = cfg or IngestConfig()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    stamps, tickers, values = _read_rows(path, cfg)
    if not stamps or not tickers:
        raise IngestError(f"{path}: no data rows")

    offsets = {ts.utcoffset() for ts in stamps}
    if len(offsets) > 1:
        raise IngestError(f"{path}: timestamps mix timezones {sorted(map(str, offsets))}")
    raw = np.array([np.datetime64(ts.replace(tzinfo=None), "s") for ts in stamps])

    keep_stamp = np.ones(len(raw), dtype=bool)
    if cfg.sessions:
        start, end = _parse_session_hours(cfg.sessions)
        tod = np.array([ts.time() for ts in stamps])
        keep_stamp = np.array([start <= t <= end for t in tod])

    order = np.argsort(raw, kind="stable")
    order = order[keep_stamp[order]]
    if len(order) == 0:
        raise IngestError(f"{path}: no bars inside trading sessions")
    raw_sorted = raw[order]
    if np.any(np.diff(raw_sorted) == np.timedelta64(0, "s")):
        raise IngestError(f"{path}: duplicate timestamps")

    if cfg.bar_interval:
        interval = parse_duration(cfg.bar_interval)
    else:
        diffs = np.diff(raw_sorted)
        same_day = _session_dates(raw_sorted[1:]) == _session_dates(raw_sorted[:-1])
        if not np.any(same_day):
            raise IngestError("cannot infer bar_interval; set it explicitly")
        interval = np.min(diffs[same_day]).astype("timedelta64[s]")

    # Regular grid per session between first and last observed bar.
    days = _session_dates(raw_sorted)
    grid_parts = []
    for day in np.unique(days):
        in_day = raw_sorted[days == day]
        span = (in_day[-1] - in_day[0]) // interval
        off_grid = (in_day - in_day[0]) % interval != np.timedelta64(0, "s")
        if np.any(off_grid):
            raise IngestError(f"bars on {day} are not aligned to bar_interval {interval}")
        grid_parts.append(in_day[0] + np.arange(int(span) + 1) * interval)
    grid = np.concatenate(grid_parts)
    pos = {int(ts): i for i, ts in enumerate(grid.astype(np.int64))}

    raw_pos = np.full(len(raw), -1)
    raw_pos[order] = [pos[int(x)] for x in raw_sorted.astype(np.int64)]
    matrix = np.full((len(tickers), len(grid)), np.nan)
    for (t, n), p in values.items():
        if raw_pos[t] >= 0:
            matrix[n, raw_pos[t]] = p

    coverage = np.mean(np.isfinite(matrix), axis=1)
    keep = coverage >= cfg.min_coverage
    for n in np.flatnonzero(~keep):
        logger.warning("dropping %s: coverage %.3f < min_coverage %.3f",
                       tickers[n], coverage[n], cfg.min_coverage)
    if not np.any(keep):
        raise IngestError(f"{path}: no ticker meets min_coverage {cfg.min_coverage}")
    matrix = matrix[keep]
    kept = tuple(t for t, k in zip(tickers, keep) if k)

    matrix = _forward_fill(matrix)
    return PricePanel(kept, grid, matrix, interval)


def _forward_fill(matrix: np.ndarray) -> np.ndarray:
    out = matrix.copy()
    n, t = out.shape
    idx = np.where(np.isfinite(out), np.arange(t), 0)
    np.maximum.accumulate(idx, axis=1, out=idx)
    out = out[np.arange(n)[:, None], idx]
    # leading gaps: back-fill with first observation
    first = np.argmax(np.isfinite(out), axis=1)
    lead = np.arange(t)[None, :] < first[:, None]
    out[lead] = np.repeat(out[np.arange(n), first], lead.sum(axis=1))
    return out


def log_returns(panel: PricePanel, include_overnight: bool = False) -> ReturnMatrix:
    """Bar log returns ``ln p(t) - ln p(t - dt)``.

    Pairs straddling a session boundary are excluded unless
    ``include_overnight`` is set, in which case the overnight return is
    attributed to the first bar of the new session.
    """
    logp = np.log(panel.prices)
    r = np.diff(logp, axis=1)
    ends = panel.timestamps[1:]
    if not include_overnight:
        same = panel.sessions[1:] == panel.sessions[:-1]
        r, ends = r[:, same], ends[same]
    return ReturnMatrix(panel.tickers, ends, r, panel.bar_interval)


def _resolve_horizon(horizon: int | str | np.timedelta64 | None,
                     bar_interval: np.timedelta64) -> int | None:
    if horizon is None or (isinstance(horizon, str) and horizon.lower() in {"session", "day", "1d"}):
        return None
    if isinstance(horizon, (int, np.integer)):
        bars = int(horizon)
    else:
        span = parse_duration(horizon)
        interval = bar_interval.astype("timedelta64[s]")
        if span % interval != np.timedelta64(0, "s"):
            raise IngestError(f"horizon {horizon} is not a multiple of bar interval {interval}")
        bars = int(span // interval)
    if bars < 1:
        raise IngestError("horizon must cover at least one bar")
    return bars


def index_returns(returns: ReturnMatrix) -> np.ndarray:
    """Equal-weighted cross-sectional mean return per bar."""
    return returns.returns.mean(axis=0)


def realized_volatility(
    returns: ReturnMatrix,
    horizon: int | str | np.timedelta64 | None = None,
    weighting: str = "equal",
) -> VolSeries:
    """Realized variance of the equal-weighted index over fixed windows.

    ``horizon`` is a bar count, a duration string such as ``"1h"``, or None
    for one window per session. Windows start at each session's first
    return; a trailing partial window is discarded.
    """
    if weighting != "equal":
        raise ValueError(f"unsupported weighting {weighting!r}")
    bars = _resolve_horizon(horizon, returns.bar_interval)
    idx = index_returns(returns)
    sq = idx * idx
    sessions = returns.sessions
    ends, days, rv = [], [], []
    dropped = 0
    for day in np.unique(sessions):
        cols = np.flatnonzero(sessions == day)
        if bars is None:
            ends.append(returns.timestamps[cols[-1]])
            days.append(day)
            rv.append(sq[cols].sum())
            continue
        n_full = len(cols) // bars
        dropped += len(cols) - n_full * bars
        for k in range(n_full):
            block = cols[k * bars:(k + 1) * bars]
            ends.append(returns.timestamps[block[-1]])
            days.append(day)
            rv.append(sq[block].sum())
    if dropped:
        logger.debug("realized_volatility: %d bars in partial windows skipped", dropped)
    vs = VolSeries(np.array(ends, dtype="datetime64[s]"),
                   np.array(days, dtype="datetime64[D]"), np.array(rv), bars)
    if vs.flagged.any():
        logger.info("realized_volatility: %d zero-variance windows flagged", int(vs.flagged.sum()))
    return vs
