import os
from typing import Final

LOG_LEVEL: Final = os.getenv("LAROS_LOG_LEVEL", "INFO")
JOBS: Final = int(os.getenv("LAROS_JOBS", "1"))
SUPPORT_THRESHOLD: Final = float(os.getenv("LAROS_SUPPORT_THRESHOLD", "1e-6"))


class LarosError(Exception):
    """Base class for every error raised by laros."""
