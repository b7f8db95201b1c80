"""Command-line entry point: ``fcsel <stage> --config cfg.yaml [--out DIR] [--seed N] [--threads N]``."""

from __future__ import annotations

import argparse
import logging
import sys

from threadpoolctl import threadpool_limits

from . import pipeline
from .artifacts import ProvenanceError
from .config import ConfigError, load_config
from .data import DataError
from .metrics import UndefinedMetricError
from .nn import NumericError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("fcsel")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fcsel", description="Taylor-scored feature-combination selection for CTR models.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("synth", "write the configured synthetic dataset as CSV"),
        ("prepare", "split and encode the dataset"),
        ("train-base", "train the base DNN and evaluate it"),
        ("score", "rank all order-2/3 combinations with the Taylor scorer"),
        ("select", "run logistic-regression elimination over the ranking"),
        ("augment", "retrain with the selected combinations and compare"),
        ("pipeline", "run every stage, resuming from valid artifacts"),
    ):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, help="YAML or JSON config file")
        sp.add_argument("--out", help="output directory (overrides config 'out')")
        sp.add_argument("--seed", type=int, help="master seed (overrides config 'seed')")
        sp.add_argument("--threads", type=int, default=1, help="BLAS threads; 1 keeps runs bit-reproducible")
        if name == "pipeline":
            sp.add_argument("--force", action="store_true", help="rerun every stage even if artifacts are valid")
    return p


def run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, out=args.out, seed=args.seed)
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    with threadpool_limits(limits=args.threads):
        if args.command == "synth":
            print(pipeline.synthesize(cfg))
        elif args.command == "pipeline":
            res = pipeline.run_pipeline(cfg, force=args.force)
            print("stages run: " + (", ".join(res["ran"]) or "(none, all up to date)"))
            print("\n".join(pipeline.summary_lines(res["report"])))
        else:
            m = pipeline.RUNNERS[args.command](cfg)
            if args.command == "augment":
                print("\n".join(pipeline.summary_lines(m)))
            else:
                print(f"{args.command}: wrote {pipeline.Workspace(cfg).manifest(args.command)}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (ConfigError, ProvenanceError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError, UndefinedMetricError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
