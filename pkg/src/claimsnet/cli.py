"""Command-line entry point: ``claimsnet <stage> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigurationError, DependencyError, StageError
from .pipeline import PROFILES, ExperimentConfig, Pipeline, canonical_variant

STAGES = ("simulate", "prepare", "tune", "train", "evaluate", "report", "run")


def build_parser():
    parser = argparse.ArgumentParser(prog="claimsnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        p = sub.add_parser(name)
        p.add_argument("--config", help="experiment configuration JSON")
        p.add_argument("--seed", type=int, help="root seed (overrides the config)")
        p.add_argument("--profile", choices=sorted(PROFILES), help="scale profile (overrides the config)")
        p.add_argument("--out", default="runs/default", help="output directory")
        p.add_argument("--variants", help="comma-separated list, e.g. FNN,FNN+,CE-baseline")
        p.add_argument("--workers", type=int, help="worker processes")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("simulate", "prepare", "train", "evaluate"):
            p.add_argument("--dataset", action="append",
                           help="dataset id (repeatable); defaults to every dataset in the config")
        if name in ("tune", "train", "evaluate"):
            p.add_argument("--variant", action="append", help="variant (repeatable)")
    return parser


def load_config(args) -> ExperimentConfig:
    raw = {}
    if args.config:
        import json

        with open(args.config, encoding="utf-8") as fh:
            raw = json.load(fh)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.profile is not None:
        raw["profile"] = args.profile
    if args.variants:
        raw["variants"] = [v.strip() for v in args.variants.split(",") if v.strip()]
    if args.workers is not None:
        raw["workers"] = args.workers
    return ExperimentConfig.from_dict(raw)


def dispatch(args):
    config = load_config(args)
    pipe = Pipeline(config, args.out)
    cmd = args.command
    if cmd == "run":
        pipe.run()
        return pipe
    if cmd == "report":
        pipe.report()
        return pipe

    variants = [canonical_variant(v) for v in (getattr(args, "variant", None) or config.variants)]
    if cmd == "tune":
        for v in variants:
            if v != "CE":
                pipe._stage("tune", config.tuning_dataset_id, pipe.tune, v)
        return pipe

    datasets = args.dataset or ([config.tuning_dataset_id] if cmd in ("simulate", "prepare") else [])
    if not args.dataset:
        datasets += list(config.dataset_ids)
    for ds in datasets:
        if cmd == "simulate":
            pipe._stage(cmd, ds, pipe.simulate, ds)
        elif cmd == "prepare":
            pipe._stage(cmd, ds, pipe.prepare, ds)
        elif cmd == "train":
            for v in variants:
                if v != "CE":
                    pipe._stage(cmd, ds, pipe.train, ds, v)
        elif cmd == "evaluate":
            for v in variants:
                pipe._stage(cmd, ds, pipe.evaluate, ds, v)
    return pipe


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        pipe = dispatch(args)
    except DependencyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except ConfigurationError as exc:
        print(f"error: configuration: {exc}", file=sys.stderr)
        return 2
    print(" ".join(f"{k}={v}" for k, v in pipe.counters.items()))
    return 0


if __name__ == "__main__":
    sys.exit(main())
