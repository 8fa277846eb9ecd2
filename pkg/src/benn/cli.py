"""Command-line entry points.

  benn run <config.json> [more configs...] [--set k=v ...] [--jobs n]
  benn validate <config.json>
  benn compare <run_dir> [more dirs...] --baseline <dir> [--out file]

Exit codes: 0 success, 2 invalid config or usage, 3 numerical abort.
"""
from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor

from . import experiments as ex


def _parser():
    p = argparse.ArgumentParser(prog="benn")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train an experiment from a JSON config")
    run.add_argument("configs", nargs="+", metavar="config.json")
    run.add_argument(
        "--set",
        dest="assignments",
        action="append",
        default=[],
        metavar="path=value",
        help="override a dotted config path, e.g. --set mdmm.damping_eq=10",
    )
    run.add_argument("--jobs", type=int, default=1, help="run configs in parallel processes")

    val = sub.add_parser("validate", help="schema-check a config without running it")
    val.add_argument("config", metavar="config.json")

    cmp_ = sub.add_parser("compare", help="compare run outputs against a baseline run")
    cmp_.add_argument("run_dirs", nargs="+", metavar="run_dir")
    cmp_.add_argument("--baseline", required=True, metavar="run_dir")
    cmp_.add_argument("--out", default=None, help="also write the CSV here")
    return p


def _run_one(args):
    path, assignments = args
    return ex.run_config_file(path, assignments)


def _cmd_run(args):
    # surface config problems for every file before any training starts
    worst = 0
    for path in args.configs:
        try:
            cfg = ex.load_config(path)
            ex.apply_overrides(cfg, args.assignments)
            cfg = ex.resolve_config(cfg)
            diags = ex.validate_config(cfg)
        except ex.ConfigError as e:
            diags = e.diagnostics
        except (IndexError, KeyError, TypeError, ValueError) as e:
            diags = [f"$: bad override: {e}"]
        for d in diags:
            print(f"{path}: {d}")
        if diags:
            worst = 2
    if worst:
        return worst
    if args.jobs > 1 and len(args.configs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            codes = list(pool.map(_run_one, [(p, args.assignments) for p in args.configs]))
    else:
        codes = [ex.run_config_file(p, args.assignments) for p in args.configs]
    return max(codes)


def _cmd_validate(args):
    try:
        cfg = ex.load_config(args.config)
        diags = ex.validate_config(ex.resolve_config(cfg))
    except ex.ConfigError as e:
        diags = e.diagnostics
    if diags:
        for d in diags:
            print(d)
        return 2
    print("valid")
    return 0


def _cmd_compare(args):
    try:
        text = ex.compare(args.run_dirs, args.baseline)
    except ex.CompareError as e:
        print(f"compare: {e}", file=sys.stderr)
        return 2
    print(text, end="")
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    return 0


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "validate":
        return _cmd_validate(args)
    return _cmd_compare(args)


def console_entry():
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
