"""Command-line front end.

Every subcommand runs the pipeline up to its own stage and writes that
stage's artifacts into ``--out``. Config keys can be overridden as
``--section.key=value``.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .harness import ConfigError, StageError, load_config, parse_overrides, run_pipeline

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3

# subcommand -> (last stage, stages skipped)
COMMANDS = {
    "gen-data": ("data", ()),
    "ingest": ("allocate", ()),
    "allocate": ("allocate", ()),
    "label": ("label", ()),
    "train-mdl": ("train", ()),
    "evaluate": ("evaluate", ()),
    "audit": ("audit", ("evaluate",)),
    "pipeline": ("report", ()),
}

HELP = {
    "gen-data": "draw location samples (synthetic or trace slots) -> samples.csv",
    "ingest": "read a trace CSV and derive worker records -> workers.csv",
    "allocate": "solve the power/rate allocation game -> allocation.json",
    "label": "attach cost-optimal deployments to the training split -> labels.csv",
    "train-mdl": "train the learned mechanism -> model.txt, loss_curve.csv",
    "evaluate": "performance ratios of every mechanism -> metrics.json, metrics.csv",
    "audit": "misreport audit of every mechanism -> audit.json",
    "pipeline": "all stages",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--seed", type=int, help="root seed (overrides run.seed)")
    common.add_argument("--out", help="output directory (overrides run.out)")
    common.add_argument("--model", help="MDL checkpoint to use instead of training")
    common.add_argument("--traces", help="trace CSV; switches data.source to traces")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="wpcrowd", description="Power allocation and strategyproof base-station deployment.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=HELP[name],
                       epilog="extra options: --section.key=value overrides any config key")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = parse_overrides([e for e in extra])
        run = overrides.setdefault("run", {})
        if args.seed is not None:
            run["seed"] = str(args.seed)
        if args.out is not None:
            run["out"] = args.out
        if args.model is not None:
            overrides.setdefault("train", {})["model"] = args.model
        if args.traces is not None:
            overrides.setdefault("data", {}).update(source="traces", traces=args.traces)
        if args.command == "ingest" and "traces" not in overrides.get("data", {}):
            raise ConfigError("ingest needs --traces or data.traces")
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    stop, skip = COMMANDS[args.command]
    try:
        state = run_pipeline(cfg, stop, skip)
    except StageError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE
    for name, path in state.files.items():
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
