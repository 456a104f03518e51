"""Run defaults derived from environment variables (and a local .env file)."""

import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()


def default_threads() -> int:
    return max(1, int(os.getenv("STOLZ_THREADS", str(os.cpu_count() or 1))))


def default_output_dir() -> Path:
    return Path(os.getenv("STOLZ_OUTPUT_DIR", "results"))


def default_log_level() -> str:
    return os.getenv("STOLZ_LOG_LEVEL", "WARNING").upper()
