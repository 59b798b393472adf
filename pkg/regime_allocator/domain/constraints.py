"""Domain-level validation rules for walk-forward runs, splits and synthetic specs."""

from __future__ import annotations

import numpy as np

from regime_allocator.domain.models import (
    SUPPORTED_DECODERS,
    SUPPORTED_ENGINES,
    SplitSpec,
    SynthSpec,
    WalkForwardConfig,
)


MIN_LOOKBACK_DAYS = 252


def validate_walk_forward_config(config: WalkForwardConfig) -> None:
    if config.lookback_days < MIN_LOOKBACK_DAYS:
        raise ValueError(f"lookback_days must be >= {MIN_LOOKBACK_DAYS}")
    if config.refit_interval_days < 1:
        raise ValueError("refit_interval_days must be >= 1")
    if config.n_states < 1:
        raise ValueError("n_states must be >= 1")
    if config.cost_per_side < 0.0:
        raise ValueError("cost_per_side must be >= 0")
    if config.engine not in SUPPORTED_ENGINES:
        raise ValueError(f"engine must be one of {SUPPORTED_ENGINES}")
    if config.jump_penalty is not None and config.jump_penalty < 0.0:
        raise ValueError("jump_penalty must be >= 0")
    if any(value < 0.0 for value in config.lambda_grid):
        raise ValueError("lambda_grid values must be >= 0")
    if config.n_restarts < 1:
        raise ValueError("n_restarts must be >= 1")
    if config.max_iter < 1 or config.hmm_max_iter < 1:
        raise ValueError("iteration caps must be >= 1")
    if config.hmm_tol <= 0.0:
        raise ValueError("hmm_tol must be > 0")
    if config.hmm_std_floor <= 0.0:
        raise ValueError("hmm_std_floor must be > 0")
    if config.median_window < 1 or config.median_window % 2 == 0:
        raise ValueError("median_window must be an odd integer >= 1")
    if config.hmm_decoder not in SUPPORTED_DECODERS:
        raise ValueError(f"hmm_decoder must be one of {SUPPORTED_DECODERS}")
    if config.seed < 0:
        raise ValueError("seed must be >= 0")


def validate_split_spec(split: SplitSpec) -> None:
    if not split.train_end < split.validation_end < split.test_end:
        raise ValueError("split dates must satisfy train_end < validation_end < test_end")


def validate_validation_length(
    n_validation_days: int,
    refit_interval_days: int,
    min_validation_days: int,
) -> None:
    if n_validation_days < min_validation_days:
        raise ValueError(
            f"validation period has {n_validation_days} trading days; "
            f"at least {min_validation_days} are required"
        )
    if n_validation_days < 2 * refit_interval_days:
        raise ValueError("validation period must contain at least two refits")


def validate_synth_spec(spec: SynthSpec) -> None:
    n_states = spec.n_states
    if n_states < 1:
        raise ValueError("state_means must not be empty")
    if spec.n_days < 1:
        raise ValueError("n_days must be >= 1")
    if len(spec.state_stds) != n_states:
        raise ValueError("state_stds must have one entry per state")
    if any(std <= 0.0 for std in spec.state_stds):
        raise ValueError("state_stds must be > 0")
    transitions = np.asarray(spec.transitions, dtype=float)
    if transitions.shape != (n_states, n_states):
        raise ValueError("transitions must be a K x K matrix")
    if np.any(transitions < 0.0):
        raise ValueError("transition probabilities must be >= 0")
    if not np.allclose(transitions.sum(axis=1), 1.0, atol=1e-12, rtol=0.0):
        raise ValueError("transition rows must sum to 1")
    if not 0 <= spec.initial_state < n_states:
        raise ValueError("initial_state must index a state")
    if spec.annual_yield <= -1.0:
        raise ValueError("annual_yield must be > -1")
    if spec.initial_price <= 0.0:
        raise ValueError("initial_price must be > 0")
    if spec.seed < 0:
        raise ValueError("seed must be >= 0")
