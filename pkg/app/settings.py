# app/settings.py
from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from typing import Optional

from dotenv import load_dotenv

from .errors import ConfigError

load_dotenv()

LOG_FORMAT = "[%(module)s] %(message)s"


def _env_float(name: str, default: float) -> float:
    raw = (os.getenv(name) or "").strip()
    if not raw:
        return default
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{name} must be a number, got {raw!r}")


def _env_int(name: str, default: int) -> int:
    raw = (os.getenv(name) or "").strip()
    if not raw:
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{name} must be an integer, got {raw!r}")


@dataclass(frozen=True)
class Settings:
    log_level: str = "INFO"
    jobs: int = 1
    max_iter: int = 1000
    huber_delta: float = 1.0
    match_threshold: float = 0.3


def load_settings() -> Settings:
    """Defaults overridden by CUBOID_* environment variables (and .env)."""
    s = Settings(
        log_level=(os.getenv("CUBOID_LOG_LEVEL") or "INFO").strip().upper(),
        jobs=_env_int("CUBOID_JOBS", 1),
        max_iter=_env_int("CUBOID_MAX_ITER", 1000),
        huber_delta=_env_float("CUBOID_HUBER_DELTA", 1.0),
        match_threshold=_env_float("CUBOID_MATCH_THRESHOLD", 0.3),
    )
    if s.jobs < 1:
        raise ConfigError("CUBOID_JOBS must be >= 1")
    if s.max_iter < 1:
        raise ConfigError("CUBOID_MAX_ITER must be >= 1")
    if s.huber_delta <= 0:
        raise ConfigError("CUBOID_HUBER_DELTA must be > 0")
    if not 0.0 <= s.match_threshold <= 1.0:
        raise ConfigError("CUBOID_MATCH_THRESHOLD must be in [0, 1]")
    if not isinstance(logging.getLevelName(s.log_level), int):
        raise ConfigError(f"CUBOID_LOG_LEVEL: unknown level {s.log_level!r}")
    return s


def configure_logging(level: Optional[str] = None) -> None:
    lvl = (level or load_settings().log_level).upper()
    if not isinstance(logging.getLevelName(lvl), int):
        raise ConfigError(f"unknown log level {lvl!r}")
    logging.basicConfig(level=lvl, format=LOG_FORMAT, force=True)
