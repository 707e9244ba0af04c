"""Command-line entry point: ``symwalks <subcommand> --config PATH``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import config as cfgmod
from .errors import ConfigError, NumericalFailure, SymwalksError
from .runner import COMMANDS, run

log = logging.getLogger("symwalks")

EXIT_VERIFY = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def build_parser():
    parser = argparse.ArgumentParser(prog="symwalks",
                                     description="Symmetrised random-walk experiments.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="JSON config file (or preset:NAME)", required=True)
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for sampling")
    parser.add_argument("--out", help="output directory (default: config 'output' or '.')")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _load(spec):
    if spec.startswith("preset:"):
        try:
            return cfgmod.preset(spec.split(":", 1)[1])
        except FileNotFoundError:
            raise ConfigError(f"no preset named {spec.split(':', 1)[1]!r}") from None
    return cfgmod.load(spec)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        cfg = cfgmod.resolve(_load(args.config), seed=args.seed)
        files, summary, ok = run(args.command, cfg, threads=args.threads)
        out = args.out or cfg.get("output") or "."
        os.makedirs(out, exist_ok=True)
        for name, text in files.items():
            path = os.path.join(out, name)
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
            log.info("wrote %s", path)
        print(summary)
    except NumericalFailure as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SymwalksError as err:
        # domain errors raised while building the model are input problems
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    return 0 if ok else EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
