"""
Shared command-line plumbing: common arguments and the objects they resolve to.
"""

import argparse
import logging
from pathlib import Path
from typing import Optional, Tuple

from pydantic import ValidationError

from mcan.config import settings
from mcan.exceptions import ConfigError
from mcan.models.network import PRESETS, Model, build, preset
from mcan.schemas import ModelConfig, RunConfig
from mcan.storage import load_weights

logger = logging.getLogger(__name__)


def hr_size(text: str) -> Tuple[int, int]:
    """argparse type for WIDTHxHEIGHT; returns (height, width)"""
    try:
        width, height = (int(part) for part in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}")
    if width < 1 or height < 1:
        raise argparse.ArgumentTypeError(f"HR size must be positive, got {text!r}")
    return height, width


def add_model_arguments(parser: argparse.ArgumentParser, weights: bool = False):
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--model", choices=list(PRESETS), type=str.upper, help="named preset")
    source.add_argument("--config", dest="config_path", help="ModelConfig JSON file")
    parser.add_argument("--scale", type=int, choices=(2, 3, 4), help="upscaling factor (default: the config's)")
    gate = parser.add_mutually_exclusive_group()
    gate.add_argument("--fast-sigmoid", dest="sigmoid_variant", action="store_const", const="fast")
    gate.add_argument("--standard-sigmoid", dest="sigmoid_variant", action="store_const", const="standard")
    parser.add_argument("--no-mim-connections", dest="mim_connections", action="store_false",
                        help="drop the links between MCABs of a cell")
    parser.add_argument("--no-eff", dest="eff_enabled", action="store_false", help="bypass edge feature fusion")
    parser.add_argument("--seed", type=int, help=f"initialization seed (default: MCAN_SEED or {settings.DEFAULT_SEED})")
    if weights:
        parser.add_argument("--weights", required=True, help="weight file")


def add_format_argument(parser: argparse.ArgumentParser):
    parser.add_argument("--format", dest="output_format", choices=("table", "records"), default="table")


def run_config(args: argparse.Namespace) -> RunConfig:
    values = {k: v for k, v in vars(args).items() if k in RunConfig.model_fields and v is not None}
    values.setdefault("seed", settings.DEFAULT_SEED)
    return RunConfig(**values)


def resolve_config(run: RunConfig) -> ModelConfig:
    overrides = {}
    if run.sigmoid_variant:
        overrides["sigmoid_variant"] = run.sigmoid_variant
    if not run.mim_connections:
        overrides["mim_connections"] = False
    if not run.eff_enabled:
        overrides["eff_enabled"] = False
    if run.model:
        return preset(run.model, run.scale or 4, **overrides)

    path = Path(run.config_path)
    try:
        config = ModelConfig.model_validate_json(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read model config {path}: {exc.strerror}") from exc
    except ValidationError as exc:
        first = exc.errors()[0]
        raise ConfigError(f"{path.name}: {'.'.join(str(p) for p in first['loc']) or 'config'}: {first['msg']}") from exc
    if run.scale:
        overrides["scale"] = run.scale
    if overrides:
        try:
            config = ModelConfig(**{**config.model_dump(), **overrides})
        except ValidationError as exc:
            raise ConfigError(f"{path.name}: {exc.errors()[0]['msg']}") from exc
    return config


def resolve_model(run: RunConfig, weights: Optional[str] = None) -> Model:
    """Build the configured model and load a weight file when one is given"""
    config = resolve_config(run)
    model = build(config, run.seed)
    weights = weights or run.weights
    if weights:
        load_weights(weights, model)
    return model
