"""Walk-forward regime strategy, jump-penalty selection and out-of-sample evaluation.

Days are indexed on the dataset calendar. For a span of days s..e the engine
infers a label for every day s-1..e using data through that day only, holds
weight 1 - forecast on day t where the forecast is the label of day t-1, and
switches between the index and the risk-free asset at a cost per side.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from typing import Any, Optional

import numpy as np
import pandas as pd

from regime_allocator.domain.constraints import (
    validate_split_spec,
    validate_validation_length,
    validate_walk_forward_config,
)
from regime_allocator.domain.models import (
    ENGINE_HMM,
    ENGINE_JUMP_MODEL,
    BacktestResult,
    FeatureMatrix,
    LambdaSelection,
    MarketDataset,
    MetricReport,
    SplitSpec,
    TestEvaluation,
    WalkForwardConfig,
    state_runs,
)
from regime_allocator.services import hmm_service, jump_model_service
from regime_allocator.services.feature_service import (
    FeatureService,
    InsufficientHistoryError,
    apply_standardizer,
    fit_standardizer,
)
from regime_allocator.services.metrics_service import MetricsService, report_for_result
from regime_allocator.utils.config import Settings, get_settings
from regime_allocator.utils.logger import get_logger


logger = get_logger(__name__)

Span = tuple[pd.Timestamp, pd.Timestamp]

STRATEGY_COLUMN = "strategy"
BENCHMARK_COLUMN = "benchmark"
HMM_COLUMN = "hmm"


class BacktestError(Exception):
    """Base exception for walk-forward failures."""


class BacktestValidationError(BacktestError):
    """Raised when a config, split or span cannot be run."""


def _validated(config: WalkForwardConfig) -> None:
    try:
        validate_walk_forward_config(config)
    except ValueError as exc:
        raise BacktestValidationError(str(exc)) from exc
    if config.engine == ENGINE_JUMP_MODEL and config.jump_penalty is None:
        raise BacktestValidationError("the jump model engine needs a jump_penalty")
    if config.engine == ENGINE_HMM and config.n_states != 2:
        raise BacktestValidationError("the HMM engine is a two-state model")


def span_indices(dates: pd.DatetimeIndex, span: Span) -> tuple[int, int]:
    """Positions of the first and last trading day inside ``span`` (inclusive)."""
    start = int(dates.searchsorted(pd.Timestamp(span[0]), side="left"))
    end = int(dates.searchsorted(pd.Timestamp(span[1]), side="right")) - 1
    if start >= len(dates) or end < start:
        raise BacktestValidationError(
            f"span {pd.Timestamp(span[0]).date()}..{pd.Timestamp(span[1]).date()} contains no trading days"
        )
    if start < 1:
        raise InsufficientHistoryError("span must start after the first trading day")
    return start, end


def refit_positions(first_label: int, last_label: int, interval: int) -> list[int]:
    """Refit days anchored at ``first_label`` and repeated every ``interval`` days."""
    return list(range(first_label, last_label + 1, interval))


def _check_history(first_label: int, config: WalkForwardConfig, warmup: int) -> None:
    window_start = first_label - config.lookback_days + 1
    required = warmup if config.engine == ENGINE_JUMP_MODEL else 0
    if window_start < required:
        raise InsufficientHistoryError(
            f"first refit window starts at day {window_start}; needs lookback {config.lookback_days} "
            f"plus warm-up {required} days of history before the span"
        )


def _jump_model_labels(
    features: FeatureMatrix,
    returns: np.ndarray,
    config: WalkForwardConfig,
    refit: int,
    last: int,
) -> Optional[np.ndarray]:
    window = range(refit - config.lookback_days + 1, refit + 1)
    params = fit_standardizer(features, window)
    standardized = apply_standardizer(features, params, range(window.start, last + 1))
    fit = jump_model_service.fit(
        standardized.rows[: len(window)],
        n_states=config.n_states,
        jump_penalty=config.jump_penalty,
        n_restarts=config.n_restarts,
        seed=config.seed,
        max_iter=config.max_iter,
        raw_returns=returns[window.start:window.stop],
    )
    if fit.degenerate:
        return None
    online = jump_model_service.forward_online_states(standardized.rows, fit.centroids, fit.jump_penalty)
    return online[len(window) - 1:]


def _hmm_labels(
    log_returns: np.ndarray,
    config: WalkForwardConfig,
    refit: int,
    last: int,
) -> np.ndarray:
    window_start = refit - config.lookback_days + 1
    model = hmm_service.baum_welch_fit(
        log_returns[window_start:refit + 1],
        n_states=config.n_states,
        n_restarts=config.n_restarts,
        seed=config.seed,
        max_iter=config.hmm_max_iter,
        tol=config.hmm_tol,
        std_floor=config.hmm_std_floor,
    )
    decoded = hmm_service.online_labels(model, log_returns[window_start:last + 1], config.hmm_decoder)
    return decoded[config.lookback_days - 1:]


def _infer_labels(
    dataset: MarketDataset,
    features: Optional[FeatureMatrix],
    config: WalkForwardConfig,
    first_label: int,
    last_label: int,
) -> tuple[np.ndarray, list[int], list[int]]:
    labels = np.zeros(last_label - first_label + 1, dtype=int)
    refits = refit_positions(first_label, last_label, config.refit_interval_days)
    degenerate: list[int] = []
    returns = np.asarray(dataset.index_returns.values)
    log_returns = np.asarray(dataset.log_returns.values)
    previous_label = 0

    for refit in refits:
        last = min(refit + config.refit_interval_days - 1, last_label)
        if config.engine == ENGINE_JUMP_MODEL:
            assert features is not None
            interval_labels = _jump_model_labels(features, returns, config, refit, last)
        else:
            interval_labels = _hmm_labels(log_returns, config, refit, last)

        if interval_labels is None:
            degenerate.append(refit)
            interval_labels = np.full(last - refit + 1, previous_label, dtype=int)
            logger.warning(
                "Degenerate refit, holding previous regime label | date=%s | label=%s",
                dataset.dates[refit].date().isoformat(),
                previous_label,
            )
        labels[refit - first_label:last - first_label + 1] = interval_labels
        previous_label = int(interval_labels[-1])
        logger.debug(
            "Refit completed | engine=%s | date=%s | interval_end=%s",
            config.engine,
            dataset.dates[refit].date().isoformat(),
            dataset.dates[last].date().isoformat(),
        )

    if config.engine == ENGINE_HMM:
        labels = hmm_service.median_filter(labels, config.median_window)
    return labels, refits, degenerate


def simulate_allocation(
    dates: pd.DatetimeIndex,
    labels: np.ndarray,
    index_returns: np.ndarray,
    risk_free: np.ndarray,
    cost_per_side: float,
    *,
    engine: str,
    jump_penalty: Optional[float],
    refit_dates: tuple[pd.Timestamp, ...] = (),
    degenerate_refit_dates: tuple[pd.Timestamp, ...] = (),
    initial_weight: float = 1.0,
) -> BacktestResult:
    """Apply forecasts to returns.

    ``labels`` covers one day more than ``dates``: ``labels[i]`` is the regime
    inferred at the close before ``dates[i]``, and the last entry is the
    forecast for the day after the span.
    """
    labels = np.asarray(labels, dtype=int)
    if labels.size != len(dates) + 1:
        raise BacktestValidationError("labels must cover the span plus the preceding day")
    forecasts = labels[:-1]
    weights = (forecasts == 0).astype(float)
    previous = np.concatenate(([initial_weight], weights[:-1]))
    trades = np.abs(weights - previous)
    gross = weights * index_returns + (1.0 - weights) * risk_free
    net = gross - cost_per_side * trades

    intervals = tuple(
        (dates[start], dates[end])
        for start, end, state in state_runs(forecasts)
        if state != 0
    )
    return BacktestResult(
        dates=dates,
        labels=labels[1:],
        forecasts=forecasts,
        weights=weights,
        index_returns=index_returns,
        risk_free=risk_free,
        gross_returns=gross,
        net_returns=net,
        equity_curve=np.cumprod(1.0 + net),
        index_equity=np.cumprod(1.0 + index_returns),
        regime_intervals=intervals,
        refit_dates=refit_dates,
        n_reallocations=int(np.count_nonzero(trades)),
        cost_per_side=cost_per_side,
        engine=engine,
        jump_penalty=jump_penalty,
        next_forecast=int(labels[-1]),
        initial_weight=initial_weight,
        degenerate_refit_dates=degenerate_refit_dates,
    )


def run_walk_forward(
    dataset: MarketDataset,
    config: WalkForwardConfig,
    span: Span,
    *,
    features: Optional[FeatureMatrix] = None,
    settings: Optional[Settings] = None,
) -> BacktestResult:
    """Walk-forward regime identification, persistence forecast and 0/1 allocation."""
    _validated(config)
    resolved = settings or get_settings()
    start, end = span_indices(dataset.dates, span)
    first_label = start - 1
    if config.engine == ENGINE_JUMP_MODEL and features is None:
        features = FeatureService(resolved).build(dataset)
    warmup = features.warmup if features is not None else 0
    _check_history(first_label, config, warmup)

    labels, refits, degenerate = _infer_labels(dataset, features, config, first_label, end)
    dates = dataset.dates
    result = simulate_allocation(
        dates[start:end + 1],
        labels,
        np.asarray(dataset.index_returns.values[start:end + 1]),
        np.asarray(dataset.risk_free_daily.values[start:end + 1]),
        config.cost_per_side,
        engine=config.engine,
        jump_penalty=config.jump_penalty if config.engine == ENGINE_JUMP_MODEL else None,
        refit_dates=tuple(dates[position] for position in refits),
        degenerate_refit_dates=tuple(dates[position] for position in degenerate),
    )
    logger.info(
        "Walk-forward completed | engine=%s | lambda=%s | start=%s | end=%s | refits=%s | reallocations=%s | cash_fraction=%.4f",
        config.engine,
        config.jump_penalty,
        dates[start].date().isoformat(),
        dates[end].date().isoformat(),
        len(refits),
        result.n_reallocations,
        result.fraction_in_cash,
    )
    return result


def _sharpe_key(report: MetricReport) -> float:
    return float("-inf") if report.sharpe is None else report.sharpe


def _validation_table(rows: list[tuple[float, BacktestResult, MetricReport]]) -> pd.DataFrame:
    records: list[dict[str, Any]] = []
    for penalty, result, report in rows:
        record = {"lambda": penalty}
        record.update({key: value for key, value in report.to_dict().items() if key not in ("mdd_peak_date", "mdd_trough_date")})
        record["n_reallocations"] = result.n_reallocations
        record["fraction_in_cash"] = result.fraction_in_cash
        records.append(record)
    return pd.DataFrame.from_records(records).set_index("lambda")


def select_lambda(
    dataset: MarketDataset,
    config: WalkForwardConfig,
    split: SplitSpec,
    *,
    features: Optional[FeatureMatrix] = None,
    settings: Optional[Settings] = None,
) -> LambdaSelection:
    """Run every grid penalty over the validation span and keep the best Sharpe.

    Ties go to the larger penalty; an undefined Sharpe never wins over a defined one.
    """
    resolved = settings or get_settings()
    if not config.lambda_grid:
        raise BacktestValidationError("lambda_grid must not be empty")
    if config.engine != ENGINE_JUMP_MODEL:
        raise BacktestValidationError("penalty selection applies to the jump model engine")
    try:
        validate_split_spec(split)
    except ValueError as exc:
        raise BacktestValidationError(str(exc)) from exc

    span = split.validation_span
    start, end = span_indices(dataset.dates, span)
    try:
        validate_validation_length(end - start + 1, config.refit_interval_days, resolved.min_validation_days)
    except ValueError as exc:
        raise BacktestValidationError(str(exc)) from exc

    if features is None:
        features = FeatureService(resolved).build(dataset)
    grid = [float(value) for value in config.lambda_grid]

    def evaluate(penalty: float) -> tuple[float, BacktestResult, MetricReport]:
        result = run_walk_forward(
            dataset,
            config.with_penalty(penalty),
            span,
            features=features,
            settings=resolved,
        )
        report = report_for_result(result, resolved.trading_days_per_year)
        logger.info(
            "Validation run completed | lambda=%.6g | sharpe=%s | turnover=%.4f",
            penalty,
            report.sharpe,
            report.avg_daily_turnover,
        )
        return penalty, result, report

    if resolved.cv_max_workers > 1 and len(grid) > 1:
        with ThreadPoolExecutor(max_workers=resolved.cv_max_workers) as pool:
            rows = list(pool.map(evaluate, grid))
    else:
        rows = [evaluate(penalty) for penalty in grid]

    _, best_penalty = max((_sharpe_key(report), penalty) for penalty, _, report in rows)
    logger.info("Jump penalty selected | lambda=%.6g | candidates=%s", best_penalty, len(grid))
    return LambdaSelection(
        chosen_lambda=best_penalty,
        table=_validation_table(rows),
        results={penalty: result for penalty, result, _ in rows},
        validation_span=(dataset.dates[start], dataset.dates[end]),
    )


def evaluate_test(
    dataset: MarketDataset,
    config: WalkForwardConfig,
    split: SplitSpec,
    *,
    compare_hmm: bool = False,
    hmm_config: Optional[WalkForwardConfig] = None,
    features: Optional[FeatureMatrix] = None,
    settings: Optional[Settings] = None,
    metrics_service: Optional[MetricsService] = None,
) -> TestEvaluation:
    """One walk-forward over the test span plus benchmark and optional HMM columns."""
    resolved = settings or get_settings()
    metrics = metrics_service or MetricsService(resolved)
    try:
        validate_split_spec(split)
    except ValueError as exc:
        raise BacktestValidationError(str(exc)) from exc

    span = split.test_span
    result = run_walk_forward(dataset, config, span, features=features, settings=resolved)
    reports = {
        STRATEGY_COLUMN: metrics.strategy(result),
        BENCHMARK_COLUMN: metrics.benchmark(result),
    }

    hmm_result = None
    if compare_hmm and config.engine != ENGINE_HMM:
        baseline = hmm_config or replace(
            config,
            engine=ENGINE_HMM,
            jump_penalty=None,
            refit_interval_days=resolved.hmm_refit_interval_days,
            n_restarts=resolved.hmm_n_restarts,
        )
        hmm_result = run_walk_forward(dataset, baseline, span, settings=resolved)
        reports[HMM_COLUMN] = metrics.strategy(hmm_result)

    return TestEvaluation(result=result, reports=reports, hmm_result=hmm_result)


def regime_summary(result: BacktestResult, trading_days_per_year: int = 252) -> list[dict[str, Any]]:
    """Index behaviour on days forecast in each regime."""
    summary = jump_model_service.summarize_regimes(
        result.forecasts,
        result.index_returns,
        n_states=max(int(result.forecasts.max(initial=0)) + 1, 2),
        trading_days_per_year=trading_days_per_year,
    )
    for row in summary:
        members = result.index_returns[result.forecasts == row["state"]]
        row["ann_return"] = (
            float(np.prod(1.0 + members) ** (trading_days_per_year / members.size) - 1.0)
            if members.size
            else 0.0
        )
    return summary


class BacktestService:
    """Runs the strategy with features built once per dataset."""

    def __init__(
        self,
        feature_service: Optional[FeatureService] = None,
        settings: Optional[Settings] = None,
        metrics_service: Optional[MetricsService] = None,
    ) -> None:
        self._settings = settings or get_settings()
        self._feature_service = feature_service or FeatureService(self._settings)
        self._metrics_service = metrics_service or MetricsService(self._settings)

    def config_from_settings(self, **overrides: Any) -> WalkForwardConfig:
        settings = self._settings
        engine = overrides.get("engine", ENGINE_JUMP_MODEL)
        base = WalkForwardConfig(
            lookback_days=settings.lookback_days,
            refit_interval_days=(
                settings.hmm_refit_interval_days if engine == ENGINE_HMM else settings.jm_refit_interval_days
            ),
            n_states=settings.jm_n_states,
            lambda_grid=settings.lambda_grid,
            cost_per_side=settings.cost_per_side,
            engine=engine,
            seed=settings.random_seed,
            n_restarts=settings.hmm_n_restarts if engine == ENGINE_HMM else settings.jm_n_restarts,
            max_iter=settings.jm_max_iter,
            hmm_max_iter=settings.hmm_max_iter,
            hmm_tol=settings.hmm_tol,
            hmm_std_floor=settings.hmm_std_floor,
            median_window=settings.hmm_median_window,
            hmm_decoder=settings.hmm_decoder,
        )
        return replace(base, **overrides)

    def _features(self, dataset: MarketDataset, config: WalkForwardConfig) -> Optional[FeatureMatrix]:
        if config.engine != ENGINE_JUMP_MODEL:
            return None
        return self._feature_service.build(dataset)

    def walk_forward(self, dataset: MarketDataset, config: WalkForwardConfig, span: Span) -> BacktestResult:
        return run_walk_forward(
            dataset,
            config,
            span,
            features=self._features(dataset, config),
            settings=self._settings,
        )

    def select_lambda(self, dataset: MarketDataset, config: WalkForwardConfig, split: SplitSpec) -> LambdaSelection:
        return select_lambda(
            dataset,
            config,
            split,
            features=self._features(dataset, config),
            settings=self._settings,
        )

    def evaluate_test(
        self,
        dataset: MarketDataset,
        config: WalkForwardConfig,
        split: SplitSpec,
        *,
        compare_hmm: bool = False,
        hmm_config: Optional[WalkForwardConfig] = None,
    ) -> TestEvaluation:
        return evaluate_test(
            dataset,
            config,
            split,
            compare_hmm=compare_hmm,
            hmm_config=hmm_config,
            features=self._features(dataset, config),
            settings=self._settings,
            metrics_service=self._metrics_service,
        )
