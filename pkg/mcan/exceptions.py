import logging
import sys
from typing import Optional

logger = logging.getLogger(__name__)


class MCANError(Exception):
    """Base error with a stable exit code and error code"""
    exit_code: int = 1
    error_code: str = "INTERNAL_ERROR"

    def __init__(self, detail: str, error_code: Optional[str] = None):
        super().__init__(detail)
        self.detail = detail
        if error_code:
            self.error_code = error_code


class UsageError(MCANError):
    exit_code = 2
    error_code = "USAGE_ERROR"


class ConfigError(UsageError, ValueError):
    """Configuration violates an architecture or training invariant"""
    error_code = "CONFIG_ERROR"


class WeightFormatError(MCANError):
    exit_code = 3
    error_code = "WEIGHT_FORMAT_ERROR"


class ChecksumError(WeightFormatError):
    error_code = "CHECKSUM_ERROR"


class ShapeError(MCANError, ValueError):
    """Tensor or weight shapes disagree; the detail names the offending dimension"""
    exit_code = 4
    error_code = "SHAPE_ERROR"


class NumericalError(MCANError, ArithmeticError):
    exit_code = 5
    error_code = "NUMERICAL_ERROR"


class ImageIOError(MCANError):
    exit_code = 6
    error_code = "IMAGE_IO_ERROR"


class DatasetError(ImageIOError):
    error_code = "DATASET_ERROR"


def handle_error(exc: BaseException) -> int:
    """Report an error on stderr and map it to the process exit code"""
    if isinstance(exc, MCANError):
        logger.error(f"{exc.error_code}: {exc.detail}")
        print(f"error[{exc.error_code}]: {exc.detail}", file=sys.stderr)
        return exc.exit_code

    logger.exception(f"Unexpected error: {exc}")
    print(f"error[{MCANError.error_code}]: {exc}", file=sys.stderr)
    return MCANError.exit_code
