"""Default configuration values, overridable via environment variables."""

import os

DEFAULT_THREADS = int(os.environ.get("ADL_THREADS", os.cpu_count() or 1))
DEFAULT_LOG_LEVEL = os.environ.get("ADL_LOG_LEVEL", "INFO")

# Binarization threshold relative to the row maximum.
DEFAULT_TAU = float(os.environ.get("ADL_TAU", "0.02"))
# Threshold used for masks built from externally measured fields.
DEFAULT_EXTERNAL_TAU = 0.05
TAU_ABLATION_GRID = (0.005, 0.01, 0.02, 0.05, 0.07, 0.1, 0.15)

DEFAULT_FD_STEP = float(os.environ.get("ADL_FD_STEP", "1e-5"))
DEFAULT_BATCH_SIZE = int(os.environ.get("ADL_BATCH_SIZE", "256"))

# Covariance is dense d x d; larger images must be downscaled first.
MAX_SPECTRAL_DIM = 16384


def thread_count() -> int:
    """Current parallelism cap; re-read so tests can change ADL_THREADS."""
    value = os.environ.get("ADL_THREADS")
    if value is None:
        return DEFAULT_THREADS
    try:
        return max(1, int(value))
    except ValueError:
        return DEFAULT_THREADS
