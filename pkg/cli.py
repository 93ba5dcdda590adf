"""
Command-line front end of the thermoloss toolkit.
Synthesizes or ingests power/temperature data, identifies the
temperature-power dynamics, and estimates power losses from temperatures.

Usage:
    python cli.py synth    --config pipeline.env --seed 0 --out out
    python cli.py identify --config pipeline.env
    python cli.py estimate --config pipeline.env
    python cli.py report   --config pipeline.env

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical error.
"""
import argparse
import logging
import os
import sys

from thermoloss.components.commands import cmd_estimate, cmd_identify, cmd_report, cmd_synth
from thermoloss.config.config import load_config
from thermoloss.utils.errors import ThermolossError
from thermoloss.utils.logging_util import resolve_log_level, setup_logging

COMMANDS = {
    "synth": cmd_synth,
    "identify": cmd_identify,
    "estimate": cmd_estimate,
    "report": cmd_report,
}


def build_parser():
    """Create the argument parser with one subcommand per pipeline stage."""
    parser = argparse.ArgumentParser(
        prog="thermoloss",
        description="Identify temperature-power dynamics and estimate power losses from temperatures",
    )
    parser.add_argument("command", choices=sorted(COMMANDS), help="Pipeline stage to run")
    parser.add_argument("--config", help="Key-value config file with dotted section keys")
    parser.add_argument("--seed", type=int, help="Seed of the synthetic sensor noise")
    parser.add_argument("--out", help="Output directory")
    parser.add_argument("--verbose", action="store_true", help="Log at DEBUG level")
    parser.add_argument("--log-file", action="store_true", help="Also log to a timestamped file under logs/")
    return parser


def main(argv=None):
    """Run one pipeline command and return the process exit code."""
    args = build_parser().parse_args(argv)

    log_to_file = args.log_file or os.environ.get("THERMOLOSS_ENV") == "production"
    logger = setup_logging(log_level=resolve_log_level(args.verbose), log_to_file=log_to_file)
    logger.info(f"Running '{args.command}'")

    try:
        config = load_config(args.config).with_overrides(seed=args.seed, out=args.out)
        COMMANDS[args.command](config)

    except ThermolossError as e:
        logger.error(f"{type(e).__name__}: {str(e)}")
        print(f"thermoloss {args.command}: {e}", file=sys.stderr)
        return e.exit_code

    except ValueError as e:
        # argument errors surfacing here come from configured values
        logger.error(f"Configuration error: {str(e)}")
        print(f"thermoloss {args.command}: configuration error: {e}", file=sys.stderr)
        return 2

    except Exception as e:
        logger.exception(f"Unexpected error: {str(e)}")
        print(f"thermoloss {args.command}: unexpected error: {e}", file=sys.stderr)
        return 1

    logger.info(f"'{args.command}' finished")
    return 0


if __name__ == "__main__":
    sys.exit(main())
