"""Run configuration: flat ``key = value`` text validated before any work starts."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .gae import GaeHyper
from .ingest import IngestConfig, parse_duration

EVAL_MODES = ("test_graph_holdout", "test_graph", "train_graph")
MODEL_KINDS = ("linear", "tree", "mlp")


class ConfigError(ValueError):
    """Invalid or unknown configuration key; maps to exit code 2."""


@dataclass(frozen=True)
class RunConfig:
    # paths
    input: str = ""  # price CSV; empty means the synthetic market from `synth`
    workspace: str = "workspace"
    scenario: str = ""  # scenario file for `synth`; empty means the default scenario
    coupling: float = 0.0
    # ingest
    layout: str = "wide"
    timestamp_column: str = "timestamp"
    ticker_column: str = "ticker"
    price_column: str = "price"
    bar_interval: str = ""
    min_coverage: float = 0.95
    sessions: str = ""
    include_overnight: bool = False
    horizon: str = "1h"  # RV window length, or "session"
    # graphs
    window_len: int = 20
    corr_threshold: float = 0.7
    corr_frequency: str = "bar"
    feature_spec: str = "daily"
    # indicator
    hidden_dim: int = 32
    latent_dim: int = 16
    learning_rate: float = 0.01
    max_epochs: int = 200
    patience: int = 20
    neg_ratio: int = 1
    split: tuple[float, float, float] = (0.85, 0.05, 0.10)
    eval_embedding: str = "test_graph_holdout"
    save_models: bool = False
    # forecast
    har_lags: tuple[int, ...] = (1, 7)
    oos_fraction: float = 0.25
    n_resamples: int = 1000
    model_kinds: tuple[str, ...] = MODEL_KINDS
    seed: int = 0

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        checks = [
            (self.layout in ("wide", "long"), "layout must be wide or long"),
            (0.0 < self.min_coverage <= 1.0, "min_coverage must lie in (0, 1]"),
            (self.window_len >= 2, "window_len must be at least 2"),
            (0.0 < self.corr_threshold < 1.0, "corr_threshold must lie in (0, 1)"),
            (self.corr_frequency in ("bar", "daily"), "corr_frequency must be bar or daily"),
            (self.feature_spec in ("daily", "bar"), "feature_spec must be daily or bar"),
            (self.hidden_dim > 0 and self.latent_dim > 0, "GAE dimensions must be positive"),
            (self.learning_rate > 0, "learning_rate must be positive"),
            (self.max_epochs > 0 and self.patience >= 0, "epochs and patience out of range"),
            (self.neg_ratio >= 1, "neg_ratio must be at least 1"),
            (len(self.split) == 3 and abs(sum(self.split) - 1.0) < 1e-9
             and min(self.split) > 0, "split must be three positive fractions summing to 1"),
            (self.eval_embedding in EVAL_MODES, f"eval_embedding must be one of {EVAL_MODES}"),
            (len(self.har_lags) > 0 and min(self.har_lags) >= 1, "har_lags must be positive"),
            (0.0 < self.oos_fraction < 1.0, "oos_fraction must lie in (0, 1)"),
            (self.n_resamples >= 1, "n_resamples must be positive"),
            (len(self.model_kinds) > 0 and set(self.model_kinds) <= set(MODEL_KINDS),
             f"model_kinds must be drawn from {MODEL_KINDS}"),
            (self.seed >= 0, "seed must be non-negative"),
            (self.coupling >= 0, "coupling must be non-negative"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        try:
            if self.horizon != "session":
                parse_duration(self.horizon)
            if self.bar_interval:
                parse_duration(self.bar_interval)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def replace(self, **kw) -> RunConfig:
        return dataclasses.replace(self, **kw)

    # -- module views --------------------------------------------------------
    def ingest_config(self) -> IngestConfig:
        return IngestConfig(self.layout, self.timestamp_column, self.ticker_column,
                            self.price_column, self.bar_interval or None, self.min_coverage,
                            self.sessions or None, self.include_overnight)

    def gae_hyper(self) -> GaeHyper:
        return GaeHyper(hidden_dim=self.hidden_dim, latent_dim=self.latent_dim,
                        learning_rate=self.learning_rate, max_epochs=self.max_epochs,
                        patience=self.patience, neg_ratio=self.neg_ratio, seed=self.seed,
                        split=self.split)

    @property
    def rv_horizon(self):
        return None if self.horizon == "session" else self.horizon

    def scoped(self, keys: tuple[str, ...]) -> dict:
        return {k: _plain(getattr(self, k)) for k in keys}

    def scoped_hash(self, keys: tuple[str, ...]) -> str:
        text = json.dumps(self.scoped(keys), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()


# config keys each stage depends on; upstream changes propagate via input hashes
STAGE_KEYS = {
    "synth": ("coupling",),  # the scenario file enters through its content hash
    "ingest": ("layout", "timestamp_column", "ticker_column", "price_column", "bar_interval",
               "min_coverage", "sessions", "include_overnight", "horizon"),
    "graphs": ("window_len", "corr_threshold", "corr_frequency", "feature_spec"),
    "indicator": ("hidden_dim", "latent_dim", "learning_rate", "max_epochs", "patience",
                  "neg_ratio", "split", "eval_embedding", "save_models", "seed"),
    "forecast": ("har_lags", "oos_fraction", "n_resamples", "model_kinds", "seed"),
    "report": (),
}


def _plain(v):
    return list(v) if isinstance(v, tuple) else v


def _coerce(name: str, text: str, default):
    text = text.strip()
    try:
        if name == "har_lags":
            return tuple(int(x) for x in text.split(",") if x.strip())
        if name == "model_kinds":
            return tuple(x.strip() for x in text.split(",") if x.strip())
        if isinstance(default, tuple):
            return tuple(float(x) for x in text.split(",") if x.strip())
        if isinstance(default, bool):
            low = text.lower()
            if low not in {"true", "false", "1", "0", "yes", "no", "on", "off"}:
                raise ValueError(f"not a boolean: {text!r}")
            return low in {"true", "1", "yes", "on"}
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {exc}") from exc
    return text


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError(f"{source}:{n}: duplicate key {key!r}")
        out[key] = value
    return out


def from_mapping(values: dict[str, str]) -> RunConfig:
    defaults = {f.name: f.default for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(values) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    kw = {k: _coerce(k, v, defaults[k]) for k, v in values.items()}
    return RunConfig(**kw)


def load_config(path: str | Path | None, **overrides) -> RunConfig:
    values: dict[str, str] = {}
    base_dir = None
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        values = parse_kv(p.read_text(encoding="utf-8"), str(p))
        base_dir = p.parent
    cfg = from_mapping(values)
    # relative paths in a config file are relative to that file
    if base_dir is not None:
        for key in ("input", "workspace", "scenario"):
            v = getattr(cfg, key)
            if v and not Path(v).is_absolute() and key in values:
                cfg = cfg.replace(**{key: str(base_dir / v)})
    return cfg.replace(**{k: v for k, v in overrides.items() if v is not None})
