"""Deterministic regime-switching synthetic markets for oracle tests and demos."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.metrics import balanced_accuracy_score

from regime_allocator.domain.constraints import validate_synth_spec
from regime_allocator.domain.models import AlignedSeries, MarketDataset, SynthSpec
from regime_allocator.services.market_data_service import build_dataset
from regime_allocator.utils.config import Settings, get_settings
from regime_allocator.utils.logger import get_logger


logger = get_logger(__name__)


class SynthError(Exception):
    """Base exception for synthetic data generation."""


class SynthValidationError(SynthError):
    """Raised when a synthetic specification or comparison is invalid."""


def _generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def simulate_states(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Markov chain path of length ``n_days`` starting in ``initial_state``."""
    cumulative = np.cumsum(np.asarray(spec.transitions, dtype=float), axis=1)
    cumulative[:, -1] = 1.0
    draws = rng.random(spec.n_days)
    states = np.empty(spec.n_days, dtype=int)
    states[0] = spec.initial_state
    for t in range(1, spec.n_days):
        states[t] = int(np.searchsorted(cumulative[states[t - 1]], draws[t], side="right"))
    return states


def simulate(spec: SynthSpec, trading_days_per_year: int = 252) -> tuple[MarketDataset, np.ndarray]:
    """Dataset and true state path; identical seeds give bit-identical outputs."""
    try:
        validate_synth_spec(spec)
    except ValueError as exc:
        raise SynthValidationError(str(exc)) from exc

    rng = _generator(spec.seed)
    states = simulate_states(spec, rng)
    noise = rng.standard_normal(spec.n_days)
    log_returns = np.asarray(spec.state_means)[states] + np.asarray(spec.state_stds)[states] * noise

    dates = pd.bdate_range(start=spec.start_date, periods=spec.n_days + 1)
    levels = spec.initial_price * np.exp(np.concatenate(([0.0], np.cumsum(log_returns))))
    prices = AlignedSeries(dates=dates, values=levels)
    yields = AlignedSeries(dates=dates, values=np.full(dates.size, spec.annual_yield))
    dataset = build_dataset(prices, yields, trading_days_per_year=trading_days_per_year)

    logger.info(
        "Synthetic market simulated | days=%s | states=%s | seed=%s | time_in_state=%s",
        spec.n_days,
        spec.n_states,
        spec.seed,
        np.bincount(states, minlength=spec.n_states).tolist(),
    )
    return dataset, states


def price_series(dataset: MarketDataset) -> AlignedSeries:
    """Index levels including the base price, in the ingestion CSV shape."""
    base_date = pd.bdate_range(end=dataset.dates[0], periods=2)[0]
    dates = pd.DatetimeIndex([base_date]).append(dataset.dates)
    values = np.concatenate(([dataset.base_price], dataset.index_prices.values))
    return AlignedSeries(dates=dates, values=values)


def balanced_accuracy(predicted: Sequence[int], truth: Sequence[int]) -> Optional[float]:
    """Mean per-class recall under the better of the two binary label mappings.

    ``None`` when the truth contains a single class.
    """
    predicted_labels = np.asarray(predicted, dtype=int)
    truth_labels = np.asarray(truth, dtype=int)
    if predicted_labels.shape != truth_labels.shape:
        raise SynthValidationError("predicted and truth must have equal length")
    if np.unique(truth_labels).size < 2:
        return None
    direct = balanced_accuracy_score(truth_labels, predicted_labels)
    swapped = balanced_accuracy_score(truth_labels, 1 - predicted_labels)
    return float(max(direct, swapped))


class SynthService:
    def __init__(self, settings: Optional[Settings] = None) -> None:
        self._settings = settings or get_settings()

    def simulate(self, spec: SynthSpec) -> tuple[MarketDataset, np.ndarray]:
        return simulate(spec, trading_days_per_year=self._settings.trading_days_per_year)
