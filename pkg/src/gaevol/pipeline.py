"""Workspace-backed stage chain: synth -> ingest -> graphs -> indicator -> forecast -> report.

Each stage writes its artifacts plus a ``manifest.json`` recording the code
version, the hash of the config keys the stage depends on and the hash of its
inputs. A stage whose manifest still matches is skipped.
"""

from __future__ import annotations

import hashlib
import json
import logging
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, corrnet, forecast, indicator, ingest, synthgen
from .config import STAGE_KEYS, ConfigError, RunConfig

logger = logging.getLogger(__name__)

STAGES = ("synth", "ingest", "graphs", "indicator", "forecast", "report")
MANIFEST = "manifest.json"


class StaleArtifactError(RuntimeError):
    """An upstream artifact is missing or stale and ``frozen`` forbids rebuilding."""


def file_hash(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _combine(hashes) -> str:
    return hashlib.sha256("\n".join(hashes).encode()).hexdigest()


@dataclass
class Workspace:
    root: Path

    def __post_init__(self) -> None:
        self.root = Path(self.root)

    def dir(self, stage: str) -> Path:
        name = {"ingest": "returns"}.get(stage, stage)
        return self.root / name

    def manifest(self, stage: str) -> dict | None:
        p = self.dir(stage) / MANIFEST
        if not p.is_file():
            return None
        return json.loads(p.read_text(encoding="utf-8"))

    def is_fresh(self, stage: str, config_hash: str, input_hash: str) -> bool:
        m = self.manifest(stage)
        if m is None or m.get("code_version") != __version__ \
                or m.get("config_hash") != config_hash or m.get("input_hash") != input_hash:
            return False
        d = self.dir(stage)
        return all((d / rel).is_file() and file_hash(d / rel) == h
                   for rel, h in m.get("outputs", {}).items())

    def output_hash(self, stage: str) -> str:
        m = self.manifest(stage)
        return _combine(f"{k}:{v}" for k, v in sorted(m["outputs"].items()))

    def write_manifest(self, stage: str, cfg: RunConfig, input_hash: str) -> None:
        d = self.dir(stage)
        outputs = {str(p.relative_to(d)): file_hash(p)
                   for p in sorted(d.rglob("*")) if p.is_file() and p.name != MANIFEST}
        m = {"stage": stage, "code_version": __version__,
             "config": cfg.scoped(STAGE_KEYS[stage]),
             "config_hash": cfg.scoped_hash(STAGE_KEYS[stage]),
             "input_hash": input_hash, "outputs": outputs}
        (d / MANIFEST).write_text(json.dumps(m, indent=2, sort_keys=True) + "\n",
                                  encoding="utf-8")

    def reset(self, stage: str) -> Path:
        d = self.dir(stage)
        if d.exists():
            shutil.rmtree(d)
        d.mkdir(parents=True)
        return d


# -- return matrix storage ----------------------------------------------------

def save_returns(rm: ingest.ReturnMatrix, directory: Path) -> None:
    np.save(directory / "returns.npy", rm.returns)
    meta = {"tickers": list(rm.tickers),
            "timestamps": [str(t) for t in np.datetime_as_string(rm.timestamps, unit="s")],
            "bar_seconds": int(rm.bar_interval / np.timedelta64(1, "s"))}
    (directory / "returns.json").write_text(json.dumps(meta, sort_keys=True), encoding="utf-8")


def load_returns(directory: Path) -> ingest.ReturnMatrix:
    meta = json.loads((directory / "returns.json").read_text(encoding="utf-8"))
    return ingest.ReturnMatrix(tuple(meta["tickers"]),
                               np.array(meta["timestamps"], dtype="datetime64[s]"),
                               np.load(directory / "returns.npy"),
                               np.timedelta64(meta["bar_seconds"], "s"))


# -- stages ----------------------------------------------------------------------

class Pipeline:
    def __init__(self, cfg: RunConfig, jobs: int = 1, frozen: bool = False):
        self.cfg = cfg
        self.jobs = max(1, jobs)
        self.frozen = frozen
        self.ws = Workspace(Path(cfg.workspace))
        self.ran: list[str] = []

    def _stage(self, stage: str, input_hash: str, build, target: str) -> None:
        h = self.cfg.scoped_hash(STAGE_KEYS[stage])
        if self.ws.is_fresh(stage, h, input_hash):
            logger.info("%s: cache hit", stage)
            return
        if self.frozen and stage != target:
            raise StaleArtifactError(f"{stage} artifacts are missing or stale (frozen run)")
        logger.info("%s: building", stage)
        d = self.ws.reset(stage)
        build(d)
        self.ws.write_manifest(stage, self.cfg, input_hash)
        self.ran.append(stage)

    def run(self, target: str) -> None:
        if target not in STAGES:
            raise ValueError(f"unknown stage {target!r}")
        chain = STAGES[: STAGES.index(target) + 1]
        if self.cfg.input:
            chain = tuple(s for s in chain if s != "synth")
        for stage in chain:
            getattr(self, f"_run_{stage}")(target)

    # each _run_* resolves its input hash and delegates to _stage
    def _run_synth(self, target: str) -> None:
        scen = Path(self.cfg.scenario) if self.cfg.scenario else None
        if scen is not None and not scen.is_file():
            raise ConfigError(f"scenario file not found: {scen}")
        in_hash = _combine([file_hash(scen) if scen else "default", str(self.cfg.seed)])

        def build(d: Path) -> None:
            sc = self.scenario()
            market = synthgen.generate(synthgen.coupled(sc, self.cfg.coupling))
            market.panel.to_csv(d / "prices.csv")
            market.truth.to_csv(d / "truth.csv")

        self._stage("synth", in_hash, build, target)

    def scenario(self) -> synthgen.Scenario:
        values = {}
        if self.cfg.scenario:
            from .config import parse_kv
            values = parse_kv(Path(self.cfg.scenario).read_text(encoding="utf-8"),
                              self.cfg.scenario)
        values.setdefault("seed", str(self.cfg.seed))
        try:
            return synthgen.scenario_from_mapping(values)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"scenario: {exc}") from exc

    def price_path(self) -> Path:
        return Path(self.cfg.input) if self.cfg.input else self.ws.dir("synth") / "prices.csv"

    def _run_ingest(self, target: str) -> None:
        src = self.price_path()
        if not src.is_file():
            raise ConfigError(f"input price file not found: {src}")

        def build(d: Path) -> None:
            panel = ingest.load_price_csv(src, self.cfg.ingest_config())
            rm = ingest.log_returns(panel, self.cfg.include_overnight)
            save_returns(rm, d)
            ingest.realized_volatility(rm, self.cfg.rv_horizon).to_csv(d / "vol.csv")

        self._stage("ingest", file_hash(src), build, target)

    def _run_graphs(self, target: str) -> None:
        def build(d: Path) -> None:
            rm = load_returns(self.ws.dir("ingest"))
            graphs = corrnet.graph_sequence(rm, self.cfg.window_len, self.cfg.corr_threshold,
                                            self.cfg.feature_spec, self.cfg.corr_frequency,
                                            self.jobs)
            for g in graphs:
                corrnet.write_graph(g, d, f"day_{g.window_end}")

        self._stage("graphs", self.ws.output_hash("ingest"), build, target)

    def load_graphs(self) -> list[corrnet.MarketGraph]:
        d = self.ws.dir("graphs")
        stems = sorted(p.name[: -len(".json")] for p in d.glob("day_*.json"))
        return [corrnet.read_graph(d, s) for s in stems]

    def _run_indicator(self, target: str) -> None:
        def build(d: Path) -> None:
            model_dir = None
            if self.cfg.save_models:
                model_dir = self.ws.dir("models")
                if model_dir.exists():
                    shutil.rmtree(model_dir)
                model_dir.mkdir(parents=True)
            series = indicator.walk_forward(self.load_graphs(), self.cfg.gae_hyper(),
                                            self.cfg.seed, self.cfg.eval_embedding,
                                            self.jobs, model_dir)
            series.to_csv(d / "indicator.csv")

        self._stage("indicator", self.ws.output_hash("graphs"), build, target)

    def load_indicator(self) -> indicator.IndicatorSeries:
        return indicator.IndicatorSeries.from_csv(self.ws.dir("indicator") / "indicator.csv")

    def load_vol(self) -> ingest.VolSeries:
        return ingest.VolSeries.from_csv(self.ws.dir("ingest") / "vol.csv")

    def dataset(self) -> forecast.HarDataset:
        return forecast.build_har_dataset(self.load_vol(), self.load_indicator(),
                                          self.cfg.har_lags, self.cfg.oos_fraction)

    def _run_forecast(self, target: str) -> None:
        def build(d: Path) -> None:
            data = self.dataset()
            comps = {k: forecast.compare_with_without(data, k, self.cfg.n_resamples, self.cfg.seed,
                                                      _hyper(k, self.cfg.seed))
                     for k in self.cfg.model_kinds}
            forecast.write_results(comps, d / "results.json")
            forecast.write_predictions(data, comps, d / "predictions.csv")

        in_hash = _combine([self.ws.output_hash("ingest"), self.ws.output_hash("indicator")])
        self._stage("forecast", in_hash, build, target)

    def _run_report(self, target: str) -> None:
        from . import report

        def build(d: Path) -> None:
            truth = None
            if not self.cfg.input:
                truth = self.ws.dir("synth") / "truth.csv"
            report.build_report(self, d, truth)

        in_hash = _combine([self.ws.output_hash(s) for s in ("ingest", "indicator", "forecast")])
        self._stage("report", in_hash, build, target)


def _hyper(kind: str, seed: int):
    if kind == "tree":
        return forecast.TreeHyper(seed=seed)
    if kind == "mlp":
        return forecast.MlpHyper(seed=seed)
    return None
