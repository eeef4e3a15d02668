#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import argparse
import logging
import sys
from typing import List, Optional

# Import own modules
from cli_io import COMMANDS, EXIT_INVALID_INPUT, OUTPUT_FORMATS, run_config
from utils import __version__, apply_overrides, load_config, setup_logging


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qwalk-bench",
        description="Exact Hadamard walk simulator and Poisson ensemble test bench")
    parser.add_argument("command", nargs="?", choices=COMMANDS,
                        help="Experiment to run (defaults to experiment.command in the config)")
    parser.add_argument("--config", help="JSON configuration file")
    parser.add_argument("--seed", type=int, help="Master random seed")
    parser.add_argument("--replicas", type=int, help="Number of Monte Carlo replicas")
    parser.add_argument("--out", help="Output file path")
    parser.add_argument("--format", choices=OUTPUT_FORMATS, help="Output format")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        help="Logging level")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    try:
        config = load_config(args.config)
    except (OSError, ValueError) as e:
        print(f"Cannot load configuration: {e}", file=sys.stderr)
        return EXIT_INVALID_INPUT
    config = apply_overrides(config, seed=args.seed, replicas=args.replicas, out=args.out,
                             fmt=args.format, log_level=args.log_level)
    if args.command:
        config["experiment"]["command"] = args.command

    # Setup logging
    setup_logging(config)
    logger = logging.getLogger(__name__)
    logger.debug(f"Resolved configuration for {config['experiment']['command']}")

    return run_config(config)


if __name__ == "__main__":
    sys.exit(main())
