"""Exponentially weighted return/downside-deviation features and causal standardization."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.preprocessing import StandardScaler

from regime_allocator.domain.models import (
    AlignedSeries,
    FeatureMatrix,
    MarketDataset,
    StandardizationParams,
)
from regime_allocator.utils.config import Settings, get_settings
from regime_allocator.utils.logger import get_logger


logger = get_logger(__name__)

_MIN_STD = 1e-12


class FeatureError(Exception):
    """Base exception for feature construction failures."""


class InvalidHalfLifeError(FeatureError):
    """Raised when a half-life is not strictly positive."""


class InsufficientHistoryError(FeatureError):
    """Raised when a series or window is too short for the requested computation."""


class ZeroVarianceFeatureError(FeatureError):
    """Raised when a feature is constant over a fitting window."""


def ewm_mean(x: Sequence[float], half_life: float) -> np.ndarray:
    """Finite-history EWM mean with weights 2**(-i / half_life), normalized at every t."""
    if not half_life > 0.0:
        raise InvalidHalfLifeError(f"half_life must be > 0, got {half_life}")
    values = np.asarray(x, dtype=float)
    if values.size == 0:
        raise InsufficientHistoryError("series must be non-empty")
    return pd.Series(values).ewm(halflife=half_life, adjust=True).mean().to_numpy()


def ewm_downside_deviation(returns: Sequence[float], half_life: float) -> np.ndarray:
    """Square root of the EWM mean of squared negative returns (threshold zero)."""
    values = np.asarray(returns, dtype=float)
    downside = np.minimum(values, 0.0)
    return np.sqrt(ewm_mean(downside * downside, half_life))


def _label(half_life: float) -> str:
    return f"{half_life:g}"


def build_feature_set(
    log_returns: AlignedSeries,
    downside_half_lives: Sequence[float] = (20.0, 60.0, 120.0),
    return_half_life: float = 120.0,
    warmup: int = 120,
) -> FeatureMatrix:
    """DD at the shortest half-life, consecutive DD differences, and the EWM return."""
    if len(log_returns) < warmup:
        raise InsufficientHistoryError(
            f"feature construction needs at least {warmup} observations, got {len(log_returns)}"
        )
    if len(downside_half_lives) < 1:
        raise FeatureError("at least one downside half-life is required")

    returns = np.asarray(log_returns.values)
    downside = [ewm_downside_deviation(returns, half_life) for half_life in downside_half_lives]
    columns = [downside[0]]
    names = [f"DD{_label(downside_half_lives[0])}"]
    for index in range(1, len(downside_half_lives)):
        columns.append(downside[index - 1] - downside[index])
        names.append(
            f"DD{_label(downside_half_lives[index - 1])}-DD{_label(downside_half_lives[index])}"
        )
    columns.append(ewm_mean(returns, return_half_life))
    names.append(f"RET{_label(return_half_life)}")

    return FeatureMatrix(
        dates=log_returns.dates,
        rows=np.column_stack(columns),
        feature_names=tuple(names),
        warmup=warmup,
    )


def _check_window(features: FeatureMatrix, window: range) -> None:
    if window.step != 1:
        raise FeatureError("window must be a contiguous range")
    if window.start < 0 or window.stop > len(features):
        raise FeatureError(f"window {window} exceeds the feature matrix of length {len(features)}")


def fit_standardizer(features: FeatureMatrix, window: range) -> StandardizationParams:
    """Per-feature mean and population standard deviation over ``window`` only."""
    _check_window(features, window)
    if len(window) < 2:
        raise InsufficientHistoryError("standardization window must contain at least 2 rows")
    if window.start < features.warmup:
        raise InsufficientHistoryError(
            f"fitting window starts at {window.start}, before the warm-up index {features.warmup}"
        )
    scaler = StandardScaler()
    scaler.fit(features.rows[window.start:window.stop])
    stds = np.sqrt(scaler.var_)
    constant = [
        name
        for name, std in zip(features.feature_names, stds)
        if std <= _MIN_STD
    ]
    if constant:
        raise ZeroVarianceFeatureError(
            f"features {constant} have zero variance on rows {window.start}..{window.stop - 1}"
        )
    return StandardizationParams(means=scaler.mean_, stds=stds)


def apply_standardizer(
    features: FeatureMatrix,
    params: StandardizationParams,
    window: range,
) -> FeatureMatrix:
    """z = (y - mean) / std for the rows in ``window``, with frozen parameters."""
    _check_window(features, window)
    if params.means.size != features.n_features:
        raise FeatureError("standardization parameters do not match the feature count")
    rows = features.rows[window.start:window.stop]
    return FeatureMatrix(
        dates=features.dates[window.start:window.stop],
        rows=(rows - params.means) / params.stds,
        feature_names=features.feature_names,
        warmup=0,
    )


class FeatureService:
    """Builds the configured feature set for a dataset."""

    def __init__(self, settings: Optional[Settings] = None) -> None:
        self._settings = settings or get_settings()

    @property
    def warmup(self) -> int:
        return self._settings.feature_warmup_days

    def build(self, dataset: MarketDataset) -> FeatureMatrix:
        features = build_feature_set(
            dataset.log_returns,
            downside_half_lives=self._settings.downside_half_lives,
            return_half_life=self._settings.return_half_life,
            warmup=self._settings.feature_warmup_days,
        )
        logger.info(
            "Feature set built | rows=%s | columns=%s | warmup=%s",
            len(features),
            ",".join(features.feature_names),
            features.warmup,
        )
        return features
