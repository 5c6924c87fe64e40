"""Matrix channel attention networks for lightweight image super-resolution."""

from mcan.config import cap_native_threads, env_int

__version__ = "1.0.0"

cap_native_threads(env_int("MCAN_THREADS", None))
