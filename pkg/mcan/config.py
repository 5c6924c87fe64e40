import os
from typing import Optional

# thread-count variables read by the BLAS and OpenMP pools behind numpy
NATIVE_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def env_int(name: str, default: Optional[int]) -> Optional[int]:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        return default


def cap_native_threads(threads: Optional[int]):
    """
    Export a thread cap to numpy's native pools.

    Only takes effect before numpy is first imported; variables the user
    already set are left alone.
    """
    if threads is None or threads < 1:
        return
    for name in NATIVE_THREAD_VARS:
        os.environ.setdefault(name, str(threads))


class Settings:
    # evaluation worker threads; also exported to BLAS pools when MCAN_THREADS is set
    THREADS: int = env_int("MCAN_THREADS", None) or os.cpu_count() or 1
    LOG_LEVEL: str = os.getenv("MCAN_LOG_LEVEL", "INFO").upper()
    DEFAULT_SEED: int = env_int("MCAN_SEED", 0)

settings = Settings()
