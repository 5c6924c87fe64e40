import argparse
import logging

from mcan.dependencies import add_model_arguments, resolve_model, run_config
from mcan.services.evaluation import upscale_image
from mcan.services.imaging import load_png, save_png

logger = logging.getLogger(__name__)


def register(subparsers):
    parser = subparsers.add_parser("upscale", help="super-resolve one PNG image")
    add_model_arguments(parser, weights=True)
    parser.add_argument("--input", required=True, help="low-resolution PNG")
    parser.add_argument("--output", required=True, help="where to write the super-resolved PNG")
    parser.add_argument("--self-ensemble", action="store_true", help="average over the 8 dihedral transforms")
    parser.set_defaults(handler=cmd_upscale)


def cmd_upscale(args: argparse.Namespace) -> int:
    run = run_config(args)
    model = resolve_model(run)
    image = load_png(run.input)
    scale = run.scale or model.config.scale
    result = upscale_image(model, image, scale, run.self_ensemble)
    save_png(result, run.output)
    logger.info(f"Upscaled {image.width}x{image.height} to {result.width}x{result.height} (x{scale})")
    return 0
