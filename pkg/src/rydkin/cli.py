"""Command-line entry point: one subcommand per scenario kind."""
from __future__ import annotations

import argparse
import logging
import os
import sys

from .errors import CapacityError, ConfigError, FitError, IntegrationError, OutputError, RydkinError
from .scenarios import KINDS, emit_config, parse_config, preset_path, run_scenario, serialize_results

log = logging.getLogger("rydkin")

EXIT_OK, EXIT_CONFIG, EXIT_CAPACITY, EXIT_NUMERICAL, EXIT_OUTPUT = 0, 2, 3, 4, 5


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rydkin",
        description="Run a Rydberg-gas scenario and write CSV tables plus a manifest.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="kind", required=True, metavar="KIND")
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run a {kind.replace('_', ' ')} scenario")
        p.add_argument("--config", help="scenario YAML (default: the shipped preset)")
        p.add_argument("--seed", type=_u64, help="root RNG seed (overrides the config)")
        p.add_argument("--out-dir", default=None, help="output directory (default: ./<scenario name>)")
        p.add_argument("--trajectories", type=_positive, help="trajectories per scan point")
        p.add_argument("--threads", type=_positive,
                       help="worker threads (default: $RYDKIN_THREADS or 1)")
        p.add_argument("--dry-run", action="store_true",
                       help="print the resolved config and exit without running")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = args.threads
    if threads is None and os.environ.get("RYDKIN_THREADS"):
        try:
            threads = _positive(os.environ["RYDKIN_THREADS"])
        except argparse.ArgumentTypeError as exc:
            print(f"rydkin: RYDKIN_THREADS: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    try:
        cfg = parse_config(args.config or preset_path(args.kind))
        if cfg["scenario"]["kind"] != args.kind:
            raise ConfigError("scenario.kind",
                              f"config describes {cfg['scenario']['kind']!r}, not {args.kind!r}")
        if args.dry_run:
            print(emit_config(cfg), end="")
            return EXIT_OK
        log.info("running %s with %s threads", cfg["scenario"]["name"], threads or 1)
        bundle = run_scenario(cfg, seed=args.seed, trajectories=args.trajectories, threads=threads)
        out_dir = args.out_dir or bundle.name
        for path in serialize_results(bundle, out_dir):
            print(path)
        for note in bundle.notes:
            log.warning(note)
    except ConfigError as exc:
        print(f"rydkin: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityError as exc:
        print(f"rydkin: capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (IntegrationError, FitError, ArithmeticError) as exc:
        print(f"rydkin: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OutputError as exc:
        print(f"rydkin: {exc}", file=sys.stderr)
        return EXIT_OUTPUT
    except RydkinError as exc:
        # invalid parameter combinations that survive schema checks
        print(f"rydkin: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
