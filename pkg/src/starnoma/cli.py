"""Command line entry point: ``starnoma run | summarize | selftest``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import checks
from .config import ConfigError, load_config
from .experiments import (SweepAborted, SweepSpec, read_summary_csv, run_sweep,
                          summarize_gains, write_gains_csv)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_ABORTED = 3
EXIT_SELFTEST = 4
EXIT_IO = 5


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    try:
        spec = SweepSpec.from_config(cfg, seed=args.seed, workers=args.workers)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(args.out)
    result = run_sweep(spec, out)
    for r in result.summary:
        print(f"{spec.axis}={r.axis_value:g}  {r.method:<16s} mean {r.mean:.4f}"
              f"  se {r.stderr:.4f}  ok {r.n_ok}  failed {r.n_failed}")
    print(f"wrote {out / 'summary.csv'} and {out / 'trials.csv'}")
    return EXIT_OK


def _cmd_summarize(args) -> int:
    axis, rows = read_summary_csv(args.input)
    try:
        gains = summarize_gains(rows, args.reference, args.treatment or None)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    write_gains_csv(gains, args.output, axis)
    for g in gains:
        pct = "undefined" if g.gain_percent is None else f"{g.gain_percent:.2f}%"
        print(f"{axis}={g.axis_value:g}  {g.treatment} vs {g.reference}: {pct}")
    return EXIT_OK


def _cmd_selftest(args) -> int:
    results = checks.run_all(args.seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}  {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_SELFTEST


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="starnoma", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log solver warnings")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a sweep described by a config file")
    r.add_argument("config", help="INI config with a [sweep] section")
    r.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    r.add_argument("--out", default="results", help="output directory")
    r.add_argument("--workers", type=int, default=None, help="worker processes")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("summarize", help="percentage gains from a summary CSV")
    s.add_argument("input", help="summary.csv written by 'run'")
    s.add_argument("output", help="gain CSV to write")
    s.add_argument("--reference", required=True, help="reference method")
    s.add_argument("--treatment", action="append", help="treatment method (repeatable)")
    s.set_defaults(func=_cmd_summarize)

    t = sub.add_parser("selftest", help="run the built-in numerical checks")
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=_cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SweepAborted as exc:
        print(f"sweep aborted: {exc}", file=sys.stderr)
        return EXIT_ABORTED
    except (OSError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # reported with a category instead of a traceback
        print(f"unexpected error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
