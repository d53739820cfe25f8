"""Command line entry point.

Subcommands:
  run <name>          run a named experiment, writing trace.csv, summary.json,
                      solution JSONs where applicable, and a rendered figure
  validate --config   schema-check a JSON configuration and print it normalized
  list                enumerate experiments and built-in models

The seed is resolved in order: --seed flag, config file, the
NONSMOOTH_BELIEF_SEED environment variable, then the built-in default.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .experiments import (
    experiment_defaults,
    experiment_names,
    run_experiment,
    validate_config,
    write_result,
)
from .models import model_names

__all__ = ["main"]

_ENV_SEED = "NONSMOOTH_BELIEF_SEED"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nsbelief",
        description="Gaussian belief propagation through nonsmooth dynamics: "
                    "experiment runner.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a named experiment")
    run.add_argument("name", help=f"experiment name, one of {experiment_names()}")
    run.add_argument("--config", type=Path, default=None, help="JSON configuration file")
    run.add_argument("--out", type=Path, default=None,
                     help="output directory (default: runs/<name>)")
    run.add_argument("--seed", type=int, default=None, help="random seed override")
    run.add_argument("--samples", type=int, default=None,
                     help="Monte-Carlo sample count override")
    run.add_argument("--steps", type=int, default=None,
                     help="integration step count override")
    run.add_argument("--no-figures", action="store_true",
                     help="skip figure rendering")

    val = sub.add_parser("validate", help="validate a JSON configuration file")
    val.add_argument("--config", type=Path, required=True)

    sub.add_parser("list", help="enumerate experiments and models")
    return parser


def _load_config(path: Path):
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise SystemExit(f"error: cannot read config {path}: {exc}")
    if not text.strip():
        return {}
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SystemExit(f"error: config {path} is not valid JSON: {exc}")


def _cmd_run(args) -> int:
    if args.name not in experiment_names():
        print(f"error: unknown experiment {args.name!r}; "
              f"available: {experiment_names()}", file=sys.stderr)
        return 2
    config = _load_config(args.config) if args.config else {}
    defaults = experiment_defaults(args.name)
    if args.seed is not None:
        config["seed"] = args.seed
    elif "seed" not in config and os.environ.get(_ENV_SEED):
        try:
            config["seed"] = int(os.environ[_ENV_SEED])
        except ValueError:
            print(f"error: {_ENV_SEED} must be an integer", file=sys.stderr)
            return 2
    for key, value in (("samples", args.samples), ("steps", args.steps)):
        if value is None:
            continue
        if key not in defaults:
            print(f"error: experiment {args.name!r} does not take --{key}",
                  file=sys.stderr)
            return 2
        config[key] = value
    cfg, errors = validate_config(config, args.name)
    if errors:
        for e in errors:
            print(f"error: {e}", file=sys.stderr)
        return 2
    try:
        result = run_experiment(args.name, cfg)
    except Exception as exc:
        print(f"error: experiment {args.name!r} failed: {exc}", file=sys.stderr)
        return 1
    out_dir = args.out if args.out is not None else Path("runs") / args.name
    written = write_result(result, out_dir, figures=not args.no_figures)
    for path in written:
        print(path)
    converged = result.summary.get("converged")
    if converged is False:
        print("warning: solver did not converge; see summary.json", file=sys.stderr)
    return 0


def _cmd_validate(args) -> int:
    raw = _load_config(args.config)
    cfg, errors = validate_config(raw)
    if errors:
        for e in errors:
            print(f"error: {e}", file=sys.stderr)
        return 2
    print(json.dumps(cfg, indent=2, sort_keys=True))
    return 0


def _cmd_list(args) -> int:
    print("experiments:")
    for name in experiment_names():
        print(f"  {name}")
    print("models:")
    for name in model_names():
        print(f"  {name}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "validate":
        return _cmd_validate(args)
    return _cmd_list(args)


if __name__ == "__main__":
    sys.exit(main())
