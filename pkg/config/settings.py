"""
Centralized process settings.
Run configuration (model, sampler, schedule) lives in .cfg files; this module
only holds what comes from the environment.
"""
import os
from dotenv import load_dotenv
import psutil

# Environment overrides
load_dotenv('config/.env')


def _thread_cap() -> int:
    raw = os.getenv("LOMAR_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return psutil.cpu_count(logical=False) or 1


# Worker threads for data-parallel training and parallel bench repetitions
LOMAR_THREADS = _thread_cap()

# Logging Configuration
LOG_LEVEL = os.getenv("LOMAR_LOG_LEVEL", "INFO")
LOG_FILE = os.getenv("LOMAR_LOG_FILE")  # optional global JSON log
RUN_LOG_NAME = "run.log"

# Output Configuration
DEFAULT_OUTPUT_DIR = os.getenv("LOMAR_OUTPUT_DIR", "runs/latest")
RESOLVED_CONFIG_NAME = "resolved.cfg"
METRICS_FILE_NAME = "metrics.csv"
