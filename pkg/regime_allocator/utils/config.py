"""Centralized configuration for model, backtest and artifact settings."""

from __future__ import annotations

import os

try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Tuple


def _env_int(name: str, default: int) -> int:
    """Safely parse integer environment values with sensible defaults."""
    value = os.getenv(name)
    if value is None:
        return default
    try:
        return int(value)
    except ValueError:
        return default


def _env_float(name: str, default: float) -> float:
    """Safely parse float environment values with sensible defaults."""
    value = os.getenv(name)
    if value is None:
        return default
    try:
        return float(value)
    except ValueError:
        return default


def _env_float_tuple(name: str, default: Tuple[float, ...]) -> Tuple[float, ...]:
    """Allow numeric grids via comma-separated env var."""
    value = os.getenv(name)
    if not value:
        return default
    try:
        items = tuple(float(item.strip()) for item in value.split(",") if item.strip())
    except ValueError:
        return default
    return items or default


@dataclass(frozen=True)
class Settings:
    """Runtime settings.

    Frozen so a run is fully described by its settings plus its RunConfig.
    """

    app_name: str
    app_version: str
    log_level: str

    trading_days_per_year: int
    feature_warmup_days: int
    downside_half_lives: Tuple[float, ...]
    return_half_life: float

    jm_n_states: int
    jm_n_restarts: int
    jm_max_iter: int

    lookback_days: int
    jm_refit_interval_days: int
    hmm_refit_interval_days: int
    cost_per_side: float

    hmm_n_restarts: int
    hmm_max_iter: int
    hmm_tol: float
    hmm_std_floor: float
    hmm_median_window: int
    hmm_decoder: str

    lambda_grid: Tuple[float, ...]
    min_validation_days: int
    cv_max_workers: int
    random_seed: int
    output_dir: Path


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Load and cache runtime settings once for process lifetime."""
    return Settings(
        app_name=os.getenv("APP_NAME", "regime-allocator"),
        app_version=os.getenv("APP_VERSION", "1.0.0"),
        log_level=os.getenv("LOG_LEVEL", "INFO"),
        trading_days_per_year=_env_int("TRADING_DAYS_PER_YEAR", 252),
        feature_warmup_days=_env_int("FEATURE_WARMUP_DAYS", 120),
        downside_half_lives=_env_float_tuple("DOWNSIDE_HALF_LIVES", (20.0, 60.0, 120.0)),
        return_half_life=_env_float("RETURN_HALF_LIFE", 120.0),
        jm_n_states=_env_int("JM_N_STATES", 2),
        jm_n_restarts=_env_int("JM_N_RESTARTS", 10),
        jm_max_iter=_env_int("JM_MAX_ITER", 300),
        lookback_days=_env_int("LOOKBACK_DAYS", 2000),
        jm_refit_interval_days=_env_int("JM_REFIT_INTERVAL_DAYS", 126),
        hmm_refit_interval_days=_env_int("HMM_REFIT_INTERVAL_DAYS", 21),
        cost_per_side=_env_float("COST_PER_SIDE", 0.0010),
        hmm_n_restarts=_env_int("HMM_N_RESTARTS", 10),
        hmm_max_iter=_env_int("HMM_MAX_ITER", 500),
        hmm_tol=_env_float("HMM_TOL", 1e-6),
        hmm_std_floor=_env_float("HMM_STD_FLOOR", 1e-8),
        hmm_median_window=_env_int("HMM_MEDIAN_WINDOW", 5),
        hmm_decoder=os.getenv("HMM_DECODER", "smoothed").strip().lower(),
        lambda_grid=_env_float_tuple(
            "LAMBDA_GRID",
            (10.0, 22.0, 50.0, 100.0, 220.0, 500.0, 1000.0),
        ),
        min_validation_days=_env_int("MIN_VALIDATION_DAYS", 504),
        cv_max_workers=_env_int("CV_MAX_WORKERS", 1),
        random_seed=_env_int("RANDOM_SEED", 0),
        output_dir=Path(os.getenv("OUTPUT_DIR", "out")),
    )
