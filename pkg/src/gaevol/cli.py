"""Command-line entry point: ``gaevol <stage> --config run.cfg``.

Exit codes: 0 success, 1 pipeline failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config
from .pipeline import STAGES, Pipeline, StaleArtifactError

logger = logging.getLogger("gaevol")

HELP = {
    "synth": "generate a synthetic market into workspace/synth",
    "ingest": "load prices, write returns and realized variance",
    "graphs": "build the daily correlation graphs",
    "indicator": "run the walk-forward AUROC indicator",
    "forecast": "fit HAR models with and without the indicator",
    "report": "write plots, the results table and summary.json",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value run configuration")
    common.add_argument("--seed", type=int, help="base seed (overrides the config)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--frozen", action="store_true",
                        help="fail instead of rebuilding stale upstream artifacts")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="gaevol", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for stage in STAGES:
        sub.add_parser(stage, parents=[common], help=HELP[stage])
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.jobs < 1:
        print("gaevol: --jobs must be at least 1", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config, seed=args.seed)
        pipe = Pipeline(cfg, jobs=args.jobs, frozen=args.frozen)
        pipe.run(args.command)
    except ConfigError as exc:
        print(f"gaevol: {exc}", file=sys.stderr)
        return 2
    except StaleArtifactError as exc:
        print(f"gaevol: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any other failure is a pipeline failure
        logger.debug("pipeline failure", exc_info=True)
        print(f"gaevol: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    built = ", ".join(pipe.ran) or "nothing (all cached)"
    print(f"{args.command}: built {built}; workspace {pipe.ws.root}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
