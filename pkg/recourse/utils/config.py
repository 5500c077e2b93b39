"""
Equal Recourse - Environment Configuration
Settings come from the environment (optionally a .env file); CLI flags override them
"""

import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

logger = logging.getLogger(__name__)

# Load environment variables (optional .env next to the working directory)
load_dotenv()


@dataclass(frozen=True)
class Settings:
    """Runtime settings resolved from the environment"""

    log_level: str = "INFO"
    log_file: Optional[str] = None
    data_dir: Path = Path("./data")
    workers: int = 1
    progress_interval: float = 30.0
    qp_tol: float = 1e-6


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return default
    try:
        return int(raw)
    except ValueError:
        logger.warning(f"⚠️ Ignoring non-integer {name}={raw!r}, using {default}")
        return default


def _env_float(name: str, default: float) -> float:
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return default
    try:
        return float(raw)
    except ValueError:
        logger.warning(f"⚠️ Ignoring non-numeric {name}={raw!r}, using {default}")
        return default


def load_settings() -> Settings:
    """Build Settings from RECOURSE_* environment variables"""
    log_file = os.getenv("RECOURSE_LOG_FILE") or None
    return Settings(
        log_level=os.getenv("RECOURSE_LOG_LEVEL", "INFO").upper(),
        log_file=log_file,
        data_dir=Path(os.getenv("RECOURSE_DATA_DIR", "./data")),
        workers=max(1, _env_int("RECOURSE_WORKERS", 1)),
        progress_interval=max(1.0, _env_float("RECOURSE_PROGRESS_INTERVAL", 30.0)),
        qp_tol=_env_float("RECOURSE_QP_TOL", 1e-6),
    )
