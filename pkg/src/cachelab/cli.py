"""Command-line entry point.

    cachelab run --config experiment.conf [--deterministic] [--out DIR]

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import sys

from .harness import run
from .trace import ConfigError, TraceParseError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cachelab",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run an experiment from a config file")
    run_p.add_argument("--config", required=True, help="experiment config file")
    run_p.add_argument("--out", default=None, help="output directory")
    run_p.add_argument("--deterministic", action="store_true",
                       help="suppress timestamps so reruns are byte-identical")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        try:
            written = run(args.config, args.out, args.deterministic)
        except (ConfigError, TraceParseError, FileNotFoundError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        except Exception as exc:  # noqa: BLE001 - CLI boundary
            print(f"runtime failure: {exc}", file=sys.stderr)
            return 3
        for path in written:
            print(path)
        return 0
    return 2


if __name__ == "__main__":
    sys.exit(main())
