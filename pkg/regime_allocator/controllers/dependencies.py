"""Shared providers that turn a RunConfig into wired services."""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Optional

from regime_allocator.controllers.run_config import RunConfig
from regime_allocator.repository.data_repository import Provenance
from regime_allocator.utils.config import Settings, get_settings


AppFactory = Callable[..., Any]


def settings_for_run(run_config: RunConfig, settings: Optional[Settings] = None) -> Settings:
    """Settings with run-level values layered on top, so services see one source of truth."""
    base = settings or get_settings()
    updates: dict[str, Any] = {}
    if run_config.seed is not None:
        updates["random_seed"] = run_config.seed
    if run_config.lookback is not None:
        updates["lookback_days"] = run_config.lookback
    if run_config.n_states is not None:
        updates["jm_n_states"] = run_config.n_states
    if run_config.n_restarts is not None:
        updates["jm_n_restarts"] = run_config.n_restarts
        updates["hmm_n_restarts"] = run_config.n_restarts
    if run_config.cost_bps is not None:
        updates["cost_per_side"] = run_config.cost_bps / 10_000.0
    if run_config.lambda_grid:
        updates["lambda_grid"] = tuple(run_config.lambda_grid)
    if run_config.hmm.median_window is not None:
        updates["hmm_median_window"] = run_config.hmm.median_window
    if run_config.hmm.decoder is not None:
        updates["hmm_decoder"] = run_config.hmm.decoder
    if run_config.output_dir is not None:
        updates["output_dir"] = run_config.resolve(run_config.output_dir)
    return replace(base, **updates) if updates else base


def output_dir_for_run(run_config: RunConfig, settings: Settings, cli_out: Optional[str]) -> Path:
    if cli_out is not None:
        return Path(cli_out)
    if run_config.output_dir is not None:
        return run_config.resolve(run_config.output_dir)
    return Path(settings.output_dir)


def provenance_for_run(run_config: RunConfig, settings: Settings) -> Provenance:
    return Provenance(config_hash=run_config.config_hash(), seed=run_config.resolved_seed(settings))


def default_app_factory() -> AppFactory:
    from app import create_app

    return create_app
