import argparse
import logging
import sys
from typing import Optional, Sequence

from mcan import __version__
from mcan.commands import count, evaluate, inspect_weights, train, upscale
from mcan.middleware import log_command
from mcan.startup import startup_checks

logger = logging.getLogger(__name__)

COMMANDS = (count, upscale, train, evaluate, inspect_weights)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcan",
        description="""
        Matrix channel attention networks for lightweight image super-resolution.

        Commands:
          count            parameters, mult-adds and sigmoid count of a model
          upscale          super-resolve one PNG image
          train            train on a directory of HR PNGs
          eval             Y-channel PSNR/SSIM over a benchmark directory
          inspect-weights  list the entries of a weight file

        Exit codes: 0 ok, 2 usage, 3 weight format/CRC, 4 shape, 5 numeric failure,
        6 image or dataset I/O, 1 unexpected error.
        """,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    startup_checks()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 for --help/--version
        return exc.code if isinstance(exc.code, int) else 2
    return log_command(args.handler, args)


if __name__ == "__main__":
    sys.exit(main())
