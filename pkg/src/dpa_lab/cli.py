"""Command-line entry point: ``dpa-lab run <experiment>`` and ``dpa-lab render <figure>``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import experiments
from .data import ConfigError

log = logging.getLogger("dpa_lab")

RUN_FLAGS = ("dataset", "beta", "epochs", "batch_size", "lr", "hidden", "hidden_layers", "m", "n_samples",
             "kT", "method", "step", "crt_b", "crt_reps", "models", "out", "parallel_seeds", "lr_schedule")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dpa-lab", description="Train DPAs and baselines and run the diagnostics.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment end to end")
    run.add_argument("experiment", help=", ".join(experiments.EXPERIMENTS))
    run.add_argument("--config", help="plain-text key = value file")
    seeds = run.add_mutually_exclusive_group()
    seeds.add_argument("--seed", type=int)
    seeds.add_argument("--seeds", help="A..B or a comma list")
    for name in RUN_FLAGS:
        run.add_argument("--" + name.replace("_", "-"), dest=name)
    run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config field")
    run.add_argument("--cache", help="directory for reusable trained checkpoints")

    render = sub.add_parser("render", help="draw an SVG figure from a finished run directory")
    render.add_argument("figure", choices=sorted(experiments.FIGURES))
    render.add_argument("--input", required=True, help="run directory")
    render.add_argument("--out", help="SVG path (default: <input>/<figure>.svg)")
    return p


def _config_from_args(args) -> experiments.ExperimentConfig:
    values = experiments.read_config_file(args.config) if args.config else {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"invalid config:\n  --set {item!r}: expected KEY=VALUE")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    for name in RUN_FLAGS:
        if getattr(args, name) is not None:
            values[name] = getattr(args, name)
    if args.seed is not None:
        values["seeds"] = str(args.seed)
    elif args.seeds is not None:
        values["seeds"] = args.seeds
    return experiments.make_config(args.experiment, values)


def _print_summary(cfg, manifest):
    print(f"{cfg.experiment}  config_hash={manifest.config_hash}  {manifest.seconds:.1f}s  -> {cfg.out_dir()}")
    print(json.dumps(manifest.summary, indent=2, default=float))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "render":
            out = args.out or f"{args.input}/{args.figure}.svg"
            experiments.FIGURES[args.figure](args.input, out)
            print(out)
            return 0
        cfg = _config_from_args(args)
    except (ConfigError, experiments.MissingInput) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    try:
        from pathlib import Path

        manifest = experiments.run(cfg, Path(args.cache) if args.cache else None)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure, tagged with the raising module
        module = getattr(exc, "__module__", None) or type(exc).__module__
        origin = exc.__traceback__
        while origin and origin.tb_next:
            origin = origin.tb_next
        where = origin.tb_frame.f_globals.get("__name__", module) if origin else module
        print(f"error [{where}]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    _print_summary(cfg, manifest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
