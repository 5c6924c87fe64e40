import logging
import os

from mcan.config import settings

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def configure_logging(level: str = None):
    """Configure root logging once; logs go to stderr"""
    logging.basicConfig(
        level=getattr(logging, (level or settings.LOG_LEVEL), logging.INFO),
        format=LOG_FORMAT,
    )


def validate_environment():
    """Validate environment overrides, falling back to defaults on bad values"""
    raw_threads = os.getenv("MCAN_THREADS")
    if raw_threads is not None and not raw_threads.strip().isdigit():
        settings.THREADS = os.cpu_count() or 1
        logger.warning(f"Ignoring MCAN_THREADS={raw_threads!r}; using {settings.THREADS} threads")
    elif settings.THREADS < 1:
        logger.warning("MCAN_THREADS must be positive; using 1 thread")
        settings.THREADS = 1

    if not isinstance(logging.getLevelName(settings.LOG_LEVEL), int):
        logger.warning(f"Unknown MCAN_LOG_LEVEL={settings.LOG_LEVEL!r}; using INFO")
        settings.LOG_LEVEL = "INFO"

    logger.debug(f"Environment validated: threads={settings.THREADS}")


def startup_checks():
    """Perform startup checks and initialization"""
    configure_logging()
    validate_environment()
