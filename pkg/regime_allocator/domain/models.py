"""Domain models for regime identification and regime-aware allocation."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any, Optional, Sequence

import numpy as np
import pandas as pd


ENGINE_JUMP_MODEL = "jm"
ENGINE_HMM = "hmm"
SUPPORTED_ENGINES = (ENGINE_JUMP_MODEL, ENGINE_HMM)

DECODER_SMOOTHED = "smoothed"
DECODER_VITERBI = "viterbi"
SUPPORTED_DECODERS = (DECODER_SMOOTHED, DECODER_VITERBI)

FEATURE_NAMES = ("DD20", "DD20-DD60", "DD60-DD120", "RET120")


def _frozen_array(values: Any, dtype: Any = float) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


def state_runs(states: Sequence[int]) -> list[tuple[int, int, int]]:
    """Run-length encode a label sequence as (start_index, end_index, state), ends inclusive."""
    labels = np.asarray(states, dtype=int)
    if labels.size == 0:
        return []
    change_points = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate(([0], change_points))
    ends = np.concatenate((change_points - 1, [labels.size - 1]))
    return [(int(start), int(end), int(labels[start])) for start, end in zip(starts, ends)]


def state_intervals(states: Sequence[int], dates: Optional[pd.DatetimeIndex] = None) -> list[dict[str, Any]]:
    """Run-length encoded states as JSON-ready records, with ISO dates when given."""
    intervals = []
    for start, end, state in state_runs(states):
        interval: dict[str, Any] = {"start": start, "end": end, "state": state}
        if dates is not None:
            interval["start_date"] = dates[start].date().isoformat()
            interval["end_date"] = dates[end].date().isoformat()
        intervals.append(interval)
    return intervals


def count_transitions(states: Sequence[int]) -> int:
    labels = np.asarray(states, dtype=int)
    if labels.size < 2:
        return 0
    return int(np.count_nonzero(np.diff(labels)))


@dataclass(frozen=True)
class AlignedSeries:
    """Date-indexed daily observations on a trading calendar."""

    dates: pd.DatetimeIndex
    values: np.ndarray

    def __post_init__(self) -> None:
        dates = pd.DatetimeIndex(self.dates)
        values = _frozen_array(self.values)
        if values.ndim != 1:
            raise ValueError("values must be one-dimensional")
        if len(dates) != values.size:
            raise ValueError(
                f"dates and values must have equal length, got {len(dates)} and {values.size}"
            )
        if not dates.is_unique:
            raise ValueError("dates must not contain duplicates")
        if not dates.is_monotonic_increasing:
            raise ValueError("dates must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ValueError("values must be finite")
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_series(cls, series: pd.Series) -> "AlignedSeries":
        ordered = series.sort_index()
        return cls(dates=pd.DatetimeIndex(ordered.index), values=ordered.to_numpy(dtype=float))

    def __len__(self) -> int:
        return int(self.values.size)

    def to_series(self, name: Optional[str] = None) -> pd.Series:
        return pd.Series(np.array(self.values), index=self.dates, name=name)

    def truncated(self, end: pd.Timestamp) -> "AlignedSeries":
        mask = self.dates <= pd.Timestamp(end)
        return AlignedSeries(dates=self.dates[mask], values=self.values[mask])


@dataclass(frozen=True)
class MarketDataset:
    """Index levels, simple and log returns, and the daily risk-free return on one calendar.

    ``base_price`` is the index level on the trading day preceding the first
    return date, so prices[t] == base_price * prod(1 + returns[:t + 1]).
    """

    index_prices: AlignedSeries
    index_returns: AlignedSeries
    log_returns: AlignedSeries
    risk_free_daily: AlignedSeries
    base_price: float

    def __post_init__(self) -> None:
        reference = self.index_prices.dates
        for label, series in (
            ("index_returns", self.index_returns),
            ("log_returns", self.log_returns),
            ("risk_free_daily", self.risk_free_daily),
        ):
            if not reference.equals(series.dates):
                raise ValueError(f"{label} must share the index_prices date vector")
        if not self.base_price > 0.0:
            raise ValueError("base_price must be positive")

    @property
    def dates(self) -> pd.DatetimeIndex:
        return self.index_prices.dates

    def __len__(self) -> int:
        return len(self.index_prices)

    def truncated(self, end: pd.Timestamp) -> "MarketDataset":
        """Dataset restricted to dates up to and including ``end``."""
        return MarketDataset(
            index_prices=self.index_prices.truncated(end),
            index_returns=self.index_returns.truncated(end),
            log_returns=self.log_returns.truncated(end),
            risk_free_daily=self.risk_free_daily.truncated(end),
            base_price=self.base_price,
        )

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "price": np.array(self.index_prices.values),
                "return": np.array(self.index_returns.values),
                "log_return": np.array(self.log_returns.values),
                "rf_daily": np.array(self.risk_free_daily.values),
            },
            index=self.dates,
        )


@dataclass(frozen=True)
class FeatureMatrix:
    """T x D feature observations; rows before ``warmup`` are flagged unusable."""

    dates: pd.DatetimeIndex
    rows: np.ndarray
    feature_names: tuple[str, ...]
    warmup: int = 0

    def __post_init__(self) -> None:
        dates = pd.DatetimeIndex(self.dates)
        rows = _frozen_array(self.rows)
        if rows.ndim != 2:
            raise ValueError("rows must be a T x D matrix")
        if rows.shape[0] != len(dates):
            raise ValueError("rows and dates must have equal length")
        if rows.shape[1] != len(self.feature_names):
            raise ValueError("feature_names must label every column")
        if not 0 <= self.warmup <= rows.shape[0]:
            raise ValueError("warmup must lie within the matrix")
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    def __len__(self) -> int:
        return int(self.rows.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.rows.shape[1])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(np.array(self.rows), index=self.dates, columns=list(self.feature_names))


@dataclass(frozen=True)
class StandardizationParams:
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self) -> None:
        means = _frozen_array(self.means)
        stds = _frozen_array(self.stds)
        if means.shape != stds.shape or means.ndim != 1:
            raise ValueError("means and stds must be vectors of equal length")
        if not np.all(stds > 0.0):
            raise ValueError("stds must be strictly positive")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stds", stds)

    def to_dict(self) -> dict[str, list[float]]:
        return {"means": self.means.tolist(), "stds": self.stds.tolist()}


@dataclass(frozen=True)
class JumpPenalty:
    value: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.value) or self.value < 0.0:
            raise ValueError("jump penalty must be a finite non-negative number")
        object.__setattr__(self, "value", float(self.value))

    def __float__(self) -> float:
        return self.value


@dataclass(frozen=True)
class JumpModelFit:
    """Centroids, decoded states and objective of one jump model estimation."""

    centroids: np.ndarray
    jump_penalty: JumpPenalty
    states: np.ndarray
    objective: float
    n_restarts_used: int
    converged: bool
    seed: int = 0
    n_iter: int = 0
    objective_path: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "centroids", _frozen_array(np.atleast_2d(self.centroids)))
        object.__setattr__(self, "states", _frozen_array(self.states, dtype=int))

    @property
    def n_states(self) -> int:
        return int(self.centroids.shape[0])

    @property
    def n_populated_states(self) -> int:
        return int(np.unique(self.states).size)

    @property
    def degenerate(self) -> bool:
        return self.n_states > 1 and self.n_populated_states < self.n_states

    @property
    def n_transitions(self) -> int:
        return count_transitions(self.states)

    def with_labels(self, permutation: Sequence[int]) -> "JumpModelFit":
        """Relabel so that old state ``permutation[k]`` becomes state ``k``."""
        order = np.asarray(permutation, dtype=int)
        inverse = np.empty_like(order)
        inverse[order] = np.arange(order.size)
        return replace(self, centroids=self.centroids[order], states=inverse[self.states])

    def to_dict(self, dates: Optional[pd.DatetimeIndex] = None) -> dict[str, Any]:
        return {
            "centroids": self.centroids.tolist(),
            "jump_penalty": self.jump_penalty.value,
            "seed": self.seed,
            "objective": self.objective,
            "n_restarts_used": self.n_restarts_used,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "n_transitions": self.n_transitions,
            "degenerate": self.degenerate,
            "state_intervals": state_intervals(self.states, dates),
        }


@dataclass(frozen=True)
class TransitionEstimate:
    matrix: np.ndarray

    def __post_init__(self) -> None:
        matrix = _frozen_array(self.matrix)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError("transition matrix must be square")
        if np.any(matrix < 0.0) or np.any(matrix > 1.0):
            raise ValueError("transition probabilities must lie in [0, 1]")
        if not np.allclose(matrix.sum(axis=1), 1.0, atol=1e-12, rtol=0.0):
            raise ValueError("transition matrix rows must sum to 1")
        object.__setattr__(self, "matrix", matrix)


@dataclass(frozen=True)
class GaussianHmm:
    """Univariate Gaussian hidden Markov model on daily log returns."""

    initial: np.ndarray
    transitions: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    log_likelihood: float
    converged: bool = True
    n_iter: int = 0
    n_restarts_used: int = 1
    seed: int = 0
    log_likelihood_path: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        initial = _frozen_array(self.initial)
        transitions = _frozen_array(np.atleast_2d(self.transitions))
        means = _frozen_array(self.means)
        stds = _frozen_array(self.stds)
        n_states = initial.size
        if transitions.shape != (n_states, n_states) or means.size != n_states or stds.size != n_states:
            raise ValueError("HMM parameter shapes are inconsistent")
        if not np.isclose(initial.sum(), 1.0, atol=1e-10, rtol=0.0):
            raise ValueError("initial distribution must sum to 1")
        if not np.allclose(transitions.sum(axis=1), 1.0, atol=1e-10, rtol=0.0):
            raise ValueError("transition rows must sum to 1")
        if not np.all(stds > 0.0):
            raise ValueError("stds must be positive")
        object.__setattr__(self, "initial", initial)
        object.__setattr__(self, "transitions", transitions)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stds", stds)

    @property
    def n_states(self) -> int:
        return int(self.initial.size)

    def to_dict(self) -> dict[str, Any]:
        return {
            "initial": self.initial.tolist(),
            "transitions": self.transitions.tolist(),
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "log_likelihood": self.log_likelihood,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "n_restarts_used": self.n_restarts_used,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class WalkForwardConfig:
    """Walk-forward protocol for one strategy run."""

    lookback_days: int = 2000
    refit_interval_days: int = 126
    n_states: int = 2
    jump_penalty: Optional[float] = None
    lambda_grid: tuple[float, ...] = ()
    cost_per_side: float = 0.0010
    engine: str = ENGINE_JUMP_MODEL
    seed: int = 0
    n_restarts: int = 10
    max_iter: int = 300
    hmm_max_iter: int = 500
    hmm_tol: float = 1e-6
    hmm_std_floor: float = 1e-8
    median_window: int = 5
    hmm_decoder: str = DECODER_SMOOTHED

    def with_penalty(self, jump_penalty: float) -> "WalkForwardConfig":
        return replace(self, jump_penalty=float(jump_penalty))


@dataclass(frozen=True)
class SplitSpec:
    """Single time-series split: train up to train_end, validate, then test."""

    train_end: pd.Timestamp
    validation_end: pd.Timestamp
    test_end: pd.Timestamp

    def __post_init__(self) -> None:
        object.__setattr__(self, "train_end", pd.Timestamp(self.train_end))
        object.__setattr__(self, "validation_end", pd.Timestamp(self.validation_end))
        object.__setattr__(self, "test_end", pd.Timestamp(self.test_end))

    @property
    def validation_span(self) -> tuple[pd.Timestamp, pd.Timestamp]:
        return self.train_end + pd.Timedelta(days=1), self.validation_end

    @property
    def test_span(self) -> tuple[pd.Timestamp, pd.Timestamp]:
        return self.validation_end + pd.Timedelta(days=1), self.test_end

    def to_dict(self) -> dict[str, str]:
        return {
            "train_end": self.train_end.date().isoformat(),
            "validation_end": self.validation_end.date().isoformat(),
            "test_end": self.test_end.date().isoformat(),
        }


@dataclass(frozen=True)
class BacktestResult:
    """Daily record of one walk-forward strategy run.

    ``labels[t]`` is the regime inferred at the close of day t; ``forecasts[t]``
    is the forecast for day t made at the previous close, and the weight held
    on day t is ``1 - forecasts[t]``.
    """

    dates: pd.DatetimeIndex
    labels: np.ndarray
    forecasts: np.ndarray
    weights: np.ndarray
    index_returns: np.ndarray
    risk_free: np.ndarray
    gross_returns: np.ndarray
    net_returns: np.ndarray
    equity_curve: np.ndarray
    index_equity: np.ndarray
    regime_intervals: tuple[tuple[pd.Timestamp, pd.Timestamp], ...]
    refit_dates: tuple[pd.Timestamp, ...]
    n_reallocations: int
    cost_per_side: float
    engine: str
    jump_penalty: Optional[float]
    next_forecast: int
    initial_weight: float = 1.0
    degenerate_refit_dates: tuple[pd.Timestamp, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "dates", pd.DatetimeIndex(self.dates))
        for name in ("labels", "forecasts"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name), dtype=int))
        for name in (
            "weights",
            "index_returns",
            "risk_free",
            "gross_returns",
            "net_returns",
            "equity_curve",
            "index_equity",
        ):
            object.__setattr__(self, name, _frozen_array(getattr(self, name)))

    def __len__(self) -> int:
        return len(self.dates)

    @property
    def fraction_in_cash(self) -> float:
        if len(self) == 0:
            return 0.0
        return float(np.mean(self.weights == 0.0))

    @property
    def n_regime_shifts(self) -> int:
        return count_transitions(self.forecasts)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "label": np.array(self.labels),
                "forecast": np.array(self.forecasts),
                "weight": np.array(self.weights),
                "index_return": np.array(self.index_returns),
                "rf_daily": np.array(self.risk_free),
                "gross_return": np.array(self.gross_returns),
                "net_return": np.array(self.net_returns),
                "strategy_equity": np.array(self.equity_curve),
                "index_equity": np.array(self.index_equity),
            },
            index=self.dates,
        )


@dataclass(frozen=True)
class MetricReport:
    """The eight strategy statistics; ``None`` marks an undefined ratio."""

    ann_return: float
    ann_vol: float
    sharpe: Optional[float]
    downside_dev: float
    sortino: Optional[float]
    max_drawdown: float
    calmar: Optional[float]
    avg_daily_turnover: float
    mdd_peak_date: Optional[pd.Timestamp] = None
    mdd_trough_date: Optional[pd.Timestamp] = None

    ROW_LABELS = ("return", "vol", "Sharpe", "DD", "Sortino", "MDD", "Calmar", "turnover")

    def rows(self) -> tuple[Optional[float], ...]:
        return (
            self.ann_return,
            self.ann_vol,
            self.sharpe,
            self.downside_dev,
            self.sortino,
            self.max_drawdown,
            self.calmar,
            self.avg_daily_turnover,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "ann_return": self.ann_return,
            "ann_vol": self.ann_vol,
            "sharpe": self.sharpe,
            "downside_dev": self.downside_dev,
            "sortino": self.sortino,
            "max_drawdown": self.max_drawdown,
            "calmar": self.calmar,
            "avg_daily_turnover": self.avg_daily_turnover,
            "mdd_peak_date": (
                self.mdd_peak_date.date().isoformat() if self.mdd_peak_date is not None else None
            ),
            "mdd_trough_date": (
                self.mdd_trough_date.date().isoformat() if self.mdd_trough_date is not None else None
            ),
        }

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "MetricReport":
        def _date(value: Optional[str]) -> Optional[pd.Timestamp]:
            return pd.Timestamp(value) if value else None

        return cls(
            ann_return=float(payload["ann_return"]),
            ann_vol=float(payload["ann_vol"]),
            sharpe=payload.get("sharpe"),
            downside_dev=float(payload["downside_dev"]),
            sortino=payload.get("sortino"),
            max_drawdown=float(payload["max_drawdown"]),
            calmar=payload.get("calmar"),
            avg_daily_turnover=float(payload["avg_daily_turnover"]),
            mdd_peak_date=_date(payload.get("mdd_peak_date")),
            mdd_trough_date=_date(payload.get("mdd_trough_date")),
        )


@dataclass(frozen=True)
class SynthSpec:
    """Markov regime-switching Gaussian path specification."""

    n_days: int
    state_means: tuple[float, ...]
    state_stds: tuple[float, ...]
    transitions: tuple[tuple[float, ...], ...]
    initial_state: int = 0
    annual_yield: float = 0.0
    seed: int = 0
    start_date: str = "2000-01-03"
    initial_price: float = 100.0

    @property
    def n_states(self) -> int:
        return len(self.state_means)


@dataclass(frozen=True)
class LambdaSelection:
    """Outcome of the validation grid search over jump penalties."""

    chosen_lambda: float
    table: pd.DataFrame
    results: dict[float, BacktestResult]
    validation_span: tuple[pd.Timestamp, pd.Timestamp]

    def to_dict(self) -> dict[str, Any]:
        start, end = self.validation_span
        return {
            "chosen_lambda": self.chosen_lambda,
            "grid": [float(value) for value in self.table.index],
            "validation_start": start.date().isoformat(),
            "validation_end": end.date().isoformat(),
        }


@dataclass(frozen=True)
class TestEvaluation:
    """Out-of-sample run of the chosen configuration with comparison columns."""

    __test__ = False

    result: BacktestResult
    reports: dict[str, MetricReport]
    hmm_result: Optional[BacktestResult] = None
