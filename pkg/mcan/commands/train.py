import argparse
import logging
from pathlib import Path

from pydantic import ValidationError

from mcan.dependencies import add_model_arguments, resolve_model, run_config
from mcan.exceptions import ConfigError, NumericalError
from mcan.schemas import TrainConfig
from mcan.services.training import AdamState, TrainingSet, train_loop, write_history
from mcan.storage import load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)

FAILED_SUFFIX = ".failed"


def register(subparsers):
    parser = subparsers.add_parser("train", help="train on a directory of HR PNGs")
    add_model_arguments(parser)
    parser.add_argument("--train-config", help="TrainConfig JSON file")
    parser.add_argument("--dataset", required=True, help="directory of HR training PNGs")
    parser.add_argument("--output", required=True, help="checkpoint to write")
    parser.add_argument("--resume", help="checkpoint to continue from")
    parser.add_argument("--steps", type=int, help="override max_steps")
    parser.add_argument("--batch", type=int, help="override the batch size")
    parser.add_argument("--patch", type=int, help="override the LR patch size")
    parser.add_argument("--history", help="loss CSV (default: <output>.csv)")
    parser.set_defaults(handler=cmd_train)


def load_train_config(args: argparse.Namespace) -> TrainConfig:
    values = {}
    if args.train_config:
        path = Path(args.train_config)
        try:
            values = TrainConfig.model_validate_json(path.read_text()).model_dump()
        except OSError as exc:
            raise ConfigError(f"cannot read training config {path}: {exc.strerror}") from exc
    overrides = {"max_steps": args.steps, "batch": args.batch, "patch": args.patch, "seed": args.seed}
    values.update({k: v for k, v in overrides.items() if v is not None})
    if args.scale:
        values["scales"] = (args.scale,)
    try:
        return TrainConfig(**values)
    except ValidationError as exc:
        first = exc.errors()[0]
        raise ConfigError(f"training config: {'.'.join(str(p) for p in first['loc'])}: {first['msg']}") from exc


def cmd_train(args: argparse.Namespace) -> int:
    """Run the training loop and write the checkpoint and loss history"""
    run = run_config(args)
    config = load_train_config(args)
    model = resolve_model(run)
    state = AdamState.zeros(model.weights, config)
    if args.resume:
        load_checkpoint(args.resume, model, state)
    dataset = TrainingSet.from_directory(run.dataset)
    output = Path(run.output)
    history_path = Path(args.history) if args.history else output.with_name(output.name + ".csv")

    def checkpoint(step, model, state):
        save_checkpoint(model, state, output)
        logger.info(f"Checkpoint at step {step} written to {output}")

    try:
        result = train_loop(model, dataset, config, on_checkpoint=checkpoint, state=state)
    except NumericalError:
        failed = output.with_name(output.name + FAILED_SUFFIX)
        save_checkpoint(model, state, failed)
        logger.error(f"Training diverged; last good weights kept in {failed}")
        raise
    save_checkpoint(model, result.state, output)
    write_history(result.history, history_path)
    logger.info(f"Wrote {output} and {history_path} (smoothed loss {result.smoothed_loss:.6f})")
    return 0
