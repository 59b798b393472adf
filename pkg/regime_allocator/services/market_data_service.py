"""Business logic for aligning index levels with risk-free yields."""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

from regime_allocator.domain.models import AlignedSeries, MarketDataset
from regime_allocator.repository.data_repository import (
    CsvSchema,
    MarketDataError,
    MarketDataRepository,
)
from regime_allocator.utils.config import Settings, get_settings
from regime_allocator.utils.logger import get_logger


logger = get_logger(__name__)


class EmptyCalendarError(MarketDataError):
    """Raised when prices and yields share no usable trading day."""


class NonPositivePriceError(MarketDataError):
    """Raised when an index level is zero or negative."""


def daily_risk_free(annual_yield: np.ndarray, trading_days_per_year: int = 252) -> np.ndarray:
    """Geometric de-annualization of a decimal annual yield."""
    return np.power(1.0 + np.asarray(annual_yield, dtype=float), 1.0 / trading_days_per_year) - 1.0


def build_dataset(
    prices: AlignedSeries,
    yields: AlignedSeries,
    trading_days_per_year: int = 252,
) -> MarketDataset:
    """Derive returns from prices and attach the forward-filled daily risk-free rate.

    The first return date is the second price date. Dates before the first
    available yield are dropped.
    """
    if len(prices) < 2:
        raise EmptyCalendarError("at least two prices are required to form a return")
    non_positive = np.flatnonzero(prices.values <= 0.0)
    if non_positive.size:
        bad_date = prices.dates[non_positive[0]].date().isoformat()
        raise NonPositivePriceError(f"index price must be positive, got {prices.values[non_positive[0]]} on {bad_date}")

    price_series = prices.to_series()
    simple_returns = pd.Series(
        prices.values[1:] / prices.values[:-1] - 1.0,
        index=prices.dates[1:],
    )
    log_returns = np.log1p(simple_returns)

    yield_series = yields.to_series()
    first_return, last_return = simple_returns.index[0], simple_returns.index[-1]
    in_window = (yield_series.index >= first_return) & (yield_series.index <= last_return)
    if not in_window.any():
        raise EmptyCalendarError(
            f"no yield observation falls between {first_return.date().isoformat()} "
            f"and {last_return.date().isoformat()}"
        )
    aligned_yields = (
        yield_series.reindex(yield_series.index.union(simple_returns.index))
        .ffill()
        .reindex(simple_returns.index)
    )
    usable = aligned_yields.notna().to_numpy()
    if not usable.any():
        raise EmptyCalendarError("price and yield calendars do not overlap")

    dates = simple_returns.index[usable]
    first_position = price_series.index.get_loc(dates[0])
    base_price = float(price_series.iloc[first_position - 1])
    rf_daily = daily_risk_free(aligned_yields.to_numpy()[usable], trading_days_per_year)

    dataset = MarketDataset(
        index_prices=AlignedSeries(dates=dates, values=price_series.loc[dates].to_numpy()),
        index_returns=AlignedSeries(dates=dates, values=simple_returns.to_numpy()[usable]),
        log_returns=AlignedSeries(dates=dates, values=log_returns.to_numpy()[usable]),
        risk_free_daily=AlignedSeries(dates=dates, values=rf_daily),
        base_price=base_price,
    )
    logger.info(
        "Market dataset built | days=%s | start=%s | end=%s | dropped_without_yield=%s",
        len(dataset),
        dates[0].date().isoformat(),
        dates[-1].date().isoformat(),
        int((~usable).sum()),
    )
    return dataset


class MarketDataService:
    """Loads price and yield files through the repository and aligns them."""

    def __init__(
        self,
        repository: Optional[MarketDataRepository] = None,
        settings: Optional[Settings] = None,
    ) -> None:
        self._settings = settings or get_settings()
        self._repository = repository or MarketDataRepository(self._settings)

    def load_dataset(
        self,
        prices_path: Union[str, Path],
        prices_schema: CsvSchema,
        yields_path: Union[str, Path],
        yields_schema: CsvSchema,
        *,
        yields_in_percent: bool = False,
    ) -> MarketDataset:
        prices = self._repository.load_series(prices_path, prices_schema)
        yields = self._repository.load_series(yields_path, yields_schema)
        if yields_in_percent:
            yields = AlignedSeries(dates=yields.dates, values=yields.values / 100.0)
        return build_dataset(
            prices,
            yields,
            trading_days_per_year=self._settings.trading_days_per_year,
        )


def dataset_summary(dataset: MarketDataset, trading_days_per_year: int = 252) -> dict[str, object]:
    frame = dataset.to_frame()
    n_days = len(frame)
    growth = float(np.prod(1.0 + frame["return"].to_numpy()))
    return {
        "n_days": n_days,
        "start": frame.index[0].date().isoformat(),
        "end": frame.index[-1].date().isoformat(),
        "base_price": dataset.base_price,
        "ann_return": growth ** (trading_days_per_year / n_days) - 1.0,
        "ann_vol": float(np.std(frame["return"].to_numpy()) * np.sqrt(trading_days_per_year)),
        "mean_rf_daily": float(frame["rf_daily"].mean()),
    }
