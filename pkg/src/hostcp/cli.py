"""Command line entry point: ``hostcp <experiment> --config PATH`` and ``hostcp gen-data``."""

import argparse
import logging
import sys

from .exceptions import ConfigError, NumericalError
from .harness import KINDS, emit_report, load_config, run_experiment, write_dataset

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

log = logging.getLogger("hostcp")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _u64(text):
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def build_parser():
    parser = _Parser(prog="hostcp", description="Learned subset selection experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="experiment", required=True, parser_class=_Parser)
    for kind in KINDS:
        if kind == "gen-data":
            continue
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", help="output directory (overrides out_dir in the config)")
        p.add_argument("--seed", type=_u64, help="run this single seed instead of the configured list")
    g = sub.add_parser("gen-data", help="write a synthetic dataset as CSV")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--seed", type=_u64, required=True)
    g.add_argument("--out", required=True, help="CSV path")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.experiment == "gen-data":
            ds = write_dataset(args.n, args.d, args.seed, args.out)
            log.info("wrote %d rows to %s", ds.n, args.out)
            return EXIT_OK
        config = load_config(args.config)
        if config.experiment != args.experiment:
            raise ConfigError(f"config is for {config.experiment!r}, not {args.experiment!r}")
        if args.seed is not None:
            config.seeds = [args.seed]
        out = args.out or config.out_dir or "."
        report, extras = run_experiment(config)
        emit_report(report, out, extras)
        log.info("wrote report to %s", out)
        return EXIT_OK
    except (ConfigError, ValueError) as exc:
        print(f"hostcp: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"hostcp: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"hostcp: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
