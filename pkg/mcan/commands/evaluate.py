import argparse
import logging

from mcan.dependencies import add_format_argument, add_model_arguments, resolve_model, run_config
from mcan.services.evaluation import evaluate

logger = logging.getLogger(__name__)


def register(subparsers):
    parser = subparsers.add_parser("eval", help="Y-channel PSNR/SSIM over a benchmark directory")
    add_model_arguments(parser, weights=True)
    parser.add_argument("--dataset", required=True, help="directory of HR PNGs, or with HR/ and LR/ subdirectories")
    parser.add_argument("--self-ensemble", action="store_true", help="average over the 8 dihedral transforms")
    parser.add_argument("--bicubic", action="store_true", help="score plain bicubic upscaling instead of the model")
    add_format_argument(parser)
    parser.set_defaults(handler=cmd_eval)


def cmd_eval(args: argparse.Namespace) -> int:
    run = run_config(args)
    model = resolve_model(run)
    report = evaluate(model, run.dataset, run.scale, run.self_ensemble, baseline=args.bicubic)
    print(report.to_records() if run.output_format == "records" else report.to_table())
    if report.skipped:
        logger.warning(f"{len(report.skipped)} unreadable or undersized images were skipped")
    return 0
