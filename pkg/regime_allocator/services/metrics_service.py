"""Performance statistics for daily strategy returns."""

from __future__ import annotations

import math
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from regime_allocator.domain.models import BacktestResult, MetricReport
from regime_allocator.utils.config import Settings, get_settings
from regime_allocator.utils.logger import get_logger


logger = get_logger(__name__)

_ZERO_TOLERANCE = 1e-14


class MetricsError(Exception):
    """Raised when metric inputs are empty or misaligned."""


def _ratio(numerator: float, denominator: float) -> Optional[float]:
    if abs(denominator) <= _ZERO_TOLERANCE:
        return None
    return float(numerator / denominator)


def annualized_return(returns: np.ndarray, trading_days_per_year: int = 252) -> float:
    """Geometric annualization of compounded daily returns."""
    growth = float(np.prod(1.0 + returns))
    return growth ** (trading_days_per_year / returns.size) - 1.0


def max_drawdown(returns: np.ndarray) -> tuple[float, int, int]:
    """Worst peak-to-trough loss of the equity path starting at 1.0.

    Positions index the equity path with the starting 1.0 at position 0.
    """
    equity = np.concatenate(([1.0], np.cumprod(1.0 + returns)))
    running_peak = np.maximum.accumulate(equity)
    drawdowns = equity / running_peak - 1.0
    trough = int(np.argmin(drawdowns))
    peak = int(np.argmax(equity[: trough + 1]))
    return float(min(drawdowns[trough], 0.0)), peak, trough


def average_turnover(weights: np.ndarray, initial_weight: Optional[float] = None) -> float:
    """Mean absolute daily weight change; the first change is taken from ``initial_weight``."""
    previous = float(weights[0]) if initial_weight is None else float(initial_weight)
    changes = np.abs(np.diff(weights, prepend=previous))
    return float(changes.mean())


def performance_report(
    net_returns: Sequence[float],
    rf_daily: Sequence[float],
    weights: Optional[Sequence[float]] = None,
    *,
    dates: Optional[pd.DatetimeIndex] = None,
    initial_weight: Optional[float] = None,
    trading_days_per_year: int = 252,
) -> MetricReport:
    returns = np.asarray(net_returns, dtype=float)
    risk_free = np.asarray(rf_daily, dtype=float)
    if returns.size == 0:
        raise MetricsError("net_returns must be non-empty")
    if risk_free.shape != returns.shape:
        raise MetricsError("rf_daily must align with net_returns")
    if not (np.all(np.isfinite(returns)) and np.all(np.isfinite(risk_free))):
        raise MetricsError("returns must be finite")

    ann_return = annualized_return(returns, trading_days_per_year)
    ann_rf = annualized_return(risk_free, trading_days_per_year)
    ann_vol = float(np.std(returns) * math.sqrt(trading_days_per_year))
    downside = np.minimum(returns, 0.0)
    downside_dev = float(math.sqrt(trading_days_per_year * float(np.mean(downside * downside))))
    mdd, peak, trough = max_drawdown(returns)

    if weights is None:
        turnover = 0.0
    else:
        weight_path = np.asarray(weights, dtype=float)
        if weight_path.shape != returns.shape:
            raise MetricsError("weights must align with net_returns")
        turnover = average_turnover(weight_path, initial_weight)

    peak_date = trough_date = None
    if dates is not None and mdd < 0.0:
        index = pd.DatetimeIndex(dates)
        peak_date = index[max(peak - 1, 0)]
        trough_date = index[trough - 1]

    return MetricReport(
        ann_return=ann_return,
        ann_vol=ann_vol,
        sharpe=_ratio(ann_return - ann_rf, ann_vol),
        downside_dev=downside_dev,
        sortino=_ratio(ann_return - ann_rf, downside_dev),
        max_drawdown=mdd,
        calmar=_ratio(ann_return, abs(mdd)),
        avg_daily_turnover=turnover,
        mdd_peak_date=peak_date,
        mdd_trough_date=trough_date,
    )


def report_for_result(result: BacktestResult, trading_days_per_year: int = 252) -> MetricReport:
    return performance_report(
        result.net_returns,
        result.risk_free,
        result.weights,
        dates=result.dates,
        initial_weight=result.initial_weight,
        trading_days_per_year=trading_days_per_year,
    )


def benchmark_report(
    index_returns: Sequence[float],
    rf_daily: Sequence[float],
    *,
    dates: Optional[pd.DatetimeIndex] = None,
    trading_days_per_year: int = 252,
) -> MetricReport:
    """Buy-and-hold: fully invested every day, no trades."""
    returns = np.asarray(index_returns, dtype=float)
    return performance_report(
        returns,
        rf_daily,
        np.ones_like(returns),
        dates=dates,
        initial_weight=1.0,
        trading_days_per_year=trading_days_per_year,
    )


def _format_cell(value: Optional[float]) -> str:
    if value is None or not math.isfinite(value):
        return "n/a"
    return f"{value:.4f}"


def report_frame(columns: Mapping[str, MetricReport]) -> pd.DataFrame:
    """Metric rows by strategy column, ``None`` kept for undefined ratios."""
    return pd.DataFrame(
        {name: list(report.rows()) for name, report in columns.items()},
        index=list(MetricReport.ROW_LABELS),
        dtype=object,
    )


def format_report_table(columns: Mapping[str, MetricReport]) -> str:
    """Aligned plain-text table: one row per statistic, one column per strategy."""
    if not columns:
        raise MetricsError("at least one report column is required")
    frame = report_frame(columns)
    formatted = frame.apply(lambda column: column.map(_format_cell))
    return formatted.to_string()


class MetricsService:
    """Strategy, benchmark and table rendering under the configured trading calendar."""

    def __init__(self, settings: Optional[Settings] = None) -> None:
        self._settings = settings or get_settings()

    def strategy(self, result: BacktestResult) -> MetricReport:
        report = report_for_result(result, self._settings.trading_days_per_year)
        logger.info(
            "Strategy metrics computed | engine=%s | lambda=%s | sharpe=%s | mdd=%.4f | turnover=%.4f",
            result.engine,
            result.jump_penalty,
            _format_cell(report.sharpe),
            report.max_drawdown,
            report.avg_daily_turnover,
        )
        return report

    def benchmark(self, result: BacktestResult) -> MetricReport:
        return benchmark_report(
            result.index_returns,
            result.risk_free,
            dates=result.dates,
            trading_days_per_year=self._settings.trading_days_per_year,
        )

    def table(self, columns: Mapping[str, MetricReport]) -> str:
        return format_report_table(columns)
