import argparse
import logging
import time
from typing import Callable

from pydantic import ValidationError

from mcan.exceptions import ConfigError, handle_error

logger = logging.getLogger(__name__)

Handler = Callable[[argparse.Namespace], int]


def _describe(args: argparse.Namespace) -> str:
    fields = {k: v for k, v in vars(args).items() if k not in ("command", "handler") and v not in (None, False)}
    return " ".join(f"{k}={v}" for k, v in fields.items())


def log_command(handler: Handler, args: argparse.Namespace) -> int:
    """Run a command handler, logging the call and its duration and mapping errors to exit codes"""
    start_time = time.time()
    logger.info(f"Command: {args.command} {_describe(args)}")

    try:
        code = handler(args)
    except ValidationError as exc:
        first = exc.errors()[0]
        location = ".".join(str(part) for part in first["loc"]) or "config"
        code = handle_error(ConfigError(f"{location}: {first['msg']}"))
    except Exception as exc:
        code = handle_error(exc)

    process_time = time.time() - start_time
    logger.info(f"Finished: exit {code} - {process_time:.4f}s")
    return code
