"""
The main entry point for ctptmed.

This module wires the registered subcommands (`fit`, `mediate`, `compare`,
`simulate`, `dist`) into an argparse command line, configures logging and maps
library errors to exit codes:

    0 success, 2 validation error, 3 numerical non-convergence, 4 I/O error

Usage:
    $ python ctptmed.py mediate data.csv --x x --m m --y y --family full
    $ python ctptmed.py simulate scenarios/table1_gamma1_nuinf.json --mode recovery
    $ python ctptmed.py dist pdf 0 --gamma 1 --nu inf
"""

import argparse
import logging
import sys

from pydantic import ValidationError

from commands import COMMANDS
from config import ARTIFACT_VERSION, settings
from errors import CtptmedError

# --- CONFIGURATION ---
# Configure logging; stderr keeps stdout free for reports and `dist` output
logging.basicConfig(
    level=settings.log_level.upper(),
    format="%(asctime)s [%(levelname)s] %(filename)s:%(lineno)d %(message)s",
    handlers=[logging.StreamHandler(sys.stderr)]
)
logger: logging.Logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctptmed",
        description="Bayesian regression and mediation with centred two-piece Student t errors")
    parser.add_argument("--version", action="version", version=f"%(prog)s {ARTIFACT_VERSION}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for cmd in COMMANDS:
        sub = subparsers.add_parser(cmd.name, help=cmd.help_text, description=cmd.help_text)
        cmd.configure(sub)
        sub.set_defaults(handler=cmd.handler)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except CtptmedError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except ValidationError as e:
        logger.error(f"Invalid settings: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
