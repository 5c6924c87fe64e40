import argparse
import logging

from mcan.dependencies import add_format_argument, add_model_arguments, hr_size, resolve_model, run_config
from mcan.services import analysis

logger = logging.getLogger(__name__)


def register(subparsers):
    parser = subparsers.add_parser("count", help="parameters, mult-adds and sigmoid count of a model")
    add_model_arguments(parser)
    parser.add_argument("--hr", dest="hr_size", type=hr_size, default=None,
                        help="HR output size WIDTHxHEIGHT for mult-adds (default 1280x720)")
    parser.add_argument("--per-layer", action="store_true", help="include one row per convolution")
    add_format_argument(parser)
    parser.set_defaults(handler=cmd_count)


def cmd_count(args: argparse.Namespace) -> int:
    """Print the cost report of a preset or config file"""
    run = run_config(args)
    model = resolve_model(run)
    report = analysis.report(model, run.hr_size, run.scale)
    if run.output_format == "records":
        print(report.to_records(run.per_layer))
    else:
        print(report.to_table(run.per_layer))
    return 0
