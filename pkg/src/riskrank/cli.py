"""Command-line entry point: one subcommand per pipeline stage."""

from __future__ import annotations

import argparse
import os
import sys

from . import pipeline
from .workload import WorkloadError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="riskrank",
        description="Misprediction risk analysis and risk-guided adaptive training",
    )
    sub = parser.add_subparsers(dest="stage", required=True)
    for name in pipeline.STAGES:
        p = sub.add_parser(name, help="run the %s stage" % name)
        p.add_argument("--config", metavar="PATH", default=None,
                       help="key=value config file")
        p.add_argument("--out", metavar="DIR", default="run",
                       help="run directory (default: ./run)")
        p.add_argument("--seed", type=int, default=None)
        for key, default in pipeline.DEFAULTS.items():
            if key == "seed":
                continue
            p.add_argument("--%s" % key.replace("_", "-"), dest=key,
                           default=None, metavar=str(type(default).__name__).upper())
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    file_values = {}
    try:
        if args.config:
            file_values = pipeline.parse_config_file(args.config)
        overrides = {}
        for key in pipeline.DEFAULTS:
            if key == "seed":
                continue
            val = getattr(args, key, None)
            if val is not None:
                overrides[key] = str(val)
        if args.seed is not None:
            overrides["seed"] = str(args.seed)
        cfg = pipeline.effective_config(file_values, overrides)
    except KeyError as exc:
        print("usage error: %s" % exc.args[0], file=sys.stderr)
        return 2
    os.makedirs(args.out, exist_ok=True)
    try:
        summary = pipeline.STAGES[args.stage](cfg, args.out)
    except (pipeline.StageError, WorkloadError, ValueError,
            FloatingPointError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    print(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
