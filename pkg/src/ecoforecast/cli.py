"""Command-line front end: ``ecoforecast <stage> [options]``.

Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import lstm, pipeline
from .config import Config, ConfigError, help_text

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--out", help="output directory (beats ECOFORECAST_OUT and config 'out')")
    p.add_argument("--jobs", type=int, default=1,
                   help="worker processes; results are identical for any value")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(
        prog="ecoforecast",
        description="Synthesize link traffic and GHG emission series, then train and compare "
                    "LSTM, ARIMAX and k-means forecasters.",
        epilog="config keys (default, meaning):\n" + help_text(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-network", parents=[common], help="write network.txt")
    sub.add_parser("simulate", parents=[common], help="run every scenario, write per-second records")
    p = sub.add_parser("aggregate", parents=[common], help="emissions and link-interval features")
    p.add_argument("--interval", type=int, choices=(30, 60))
    p = sub.add_parser("correlate", parents=[common], help="lagged correlation matrix and ranking")
    p.add_argument("--interval", type=int, choices=(30, 60))
    p = sub.add_parser("tune", parents=[common], help="Bayesian optimization of LSTM presets")
    p.add_argument("--preset", action="append", choices=list(lstm.PRESETS))
    p = sub.add_parser("train-lstm", parents=[common], help="train LSTM presets")
    p.add_argument("--preset", action="append", choices=list(lstm.PRESETS))
    p.add_argument("--interval", type=int, choices=(30, 60))
    p = sub.add_parser("train-kmeans", parents=[common], help="k-means models and elbow curve")
    p.add_argument("--k", type=int, action="append")
    sub.add_parser("train-arimax", parents=[common], help="per-link ARIMAX on representative links")
    sub.add_parser("evaluate", parents=[common], help="metrics report and scatter data")
    sub.add_parser("pipeline", parents=[common], help="every stage in order")
    return parser


def _out_dir(args, cfg):
    return args.out or os.environ.get("ECOFORECAST_OUT") or cfg["out"]


def run_command(args) -> int:
    try:
        cfg = Config.load(args.config, args.set)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.jobs < 1:
        print("config error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    run = pipeline.Run(cfg, _out_dir(args, cfg), args.jobs)
    c = args.command
    try:
        if c == "gen-network":
            pipeline.gen_network(run)
        elif c == "simulate":
            pipeline.simulate(run)
        elif c == "aggregate":
            pipeline.aggregate(run, args.interval)
        elif c == "correlate":
            pipeline.correlate(run, args.interval)
        elif c == "tune":
            pipeline.tune(run, args.preset)
        elif c == "train-lstm":
            pipeline.train_lstm(run, args.preset, args.interval)
        elif c == "train-kmeans":
            pipeline.train_kmeans(run, args.k)
        elif c == "train-arimax":
            pipeline.train_arimax(run)
        elif c == "evaluate":
            pipeline.evaluate(run, verbose=args.verbose)
            sys.stdout.write(run.path("report/report.txt").read_text(encoding="utf-8"))
        elif c == "pipeline":
            pipeline.run_all(run)
            sys.stdout.write(run.path("report/report.txt").read_text(encoding="utf-8"))
    except pipeline.StageError as exc:
        print(f"stage failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return run_command(args)


if __name__ == "__main__":
    sys.exit(main())
