from __future__ import annotations

import math

import numpy as np
import pandas as pd
import pytest

from regime_allocator.domain.models import MetricReport
from regime_allocator.services.backtest_service import simulate_allocation
from regime_allocator.services.metrics_service import (
    MetricsError,
    MetricsService,
    format_report_table,
    max_drawdown,
    performance_report,
)


def _spreadsheet_report(returns, rf, weights, periods=252):
    """Independent row-by-row recomputation of every statistic."""
    n = len(returns)
    growth = 1.0
    rf_growth = 1.0
    for value, rate in zip(returns, rf):
        growth *= 1.0 + value
        rf_growth *= 1.0 + rate
    ann_return = growth ** (periods / n) - 1.0
    ann_rf = rf_growth ** (periods / n) - 1.0
    mean = sum(returns) / n
    vol = math.sqrt(sum((value - mean) ** 2 for value in returns) / n) * math.sqrt(periods)
    downside = math.sqrt(periods * sum(min(value, 0.0) ** 2 for value in returns) / n)
    equity, peak, worst = 1.0, 1.0, 0.0
    for value in returns:
        equity *= 1.0 + value
        peak = max(peak, equity)
        worst = min(worst, equity / peak - 1.0)
    turnover = sum(abs(weights[i] - weights[i - 1]) for i in range(1, n)) / n
    return {
        "ann_return": ann_return,
        "ann_vol": vol,
        "sharpe": (ann_return - ann_rf) / vol,
        "downside_dev": downside,
        "sortino": (ann_return - ann_rf) / downside,
        "max_drawdown": worst,
        "calmar": ann_return / abs(worst),
        "avg_daily_turnover": turnover,
    }


def test_drawdown_of_hand_path():
    returns = np.array([0.2, -0.5, 0.5])
    mdd, peak, trough = max_drawdown(returns)
    assert mdd == pytest.approx(-0.5)
    assert (peak, trough) == (1, 2)


def test_drawdown_dates_follow_the_equity_points():
    dates = pd.bdate_range("2020-01-01", periods=3)
    report = performance_report([0.2, -0.5, 0.5], [0.0, 0.0, 0.0], dates=dates)
    assert report.mdd_peak_date == dates[0]
    assert report.mdd_trough_date == dates[1]


def test_monotone_path_has_zero_drawdown():
    report = performance_report([0.01, 0.0, 0.02, 0.005], [0.0] * 4)
    assert report.max_drawdown == 0.0
    assert report.calmar is None


def test_all_zero_returns_leave_ratios_undefined():
    report = performance_report(np.zeros(100), np.zeros(100))
    assert report.ann_return == 0.0
    assert report.max_drawdown == 0.0
    assert report.sharpe is None
    assert report.sortino is None
    assert report.calmar is None


def test_constant_weights_have_zero_turnover():
    report = performance_report(np.full(10, 0.001), np.zeros(10), np.ones(10))
    assert report.avg_daily_turnover == 0.0


def test_absent_weights_report_zero_turnover():
    assert performance_report([0.01, -0.01], [0.0, 0.0]).avg_daily_turnover == 0.0


def test_binary_turnover_counts_flips_per_day():
    weights = np.array([1, 1, 0, 0, 1, 0, 1, 1], dtype=float)
    report = performance_report(np.zeros(8) + 0.001, np.zeros(8), weights)
    assert report.avg_daily_turnover == pytest.approx(4 / 8)


def test_initial_weight_counts_the_first_trade():
    report = performance_report([0.0, 0.0], [0.0, 0.0], [0.0, 0.0], initial_weight=1.0)
    assert report.avg_daily_turnover == pytest.approx(0.5)


def test_report_matches_independent_recomputation():
    rng = np.random.default_rng(33)
    n_days = 33 * 252
    returns = rng.normal(0.0004, 0.011, size=n_days)
    rf = np.full(n_days, 0.0001)
    weights = (rng.random(n_days) > 0.1).astype(float)

    report = performance_report(returns, rf, weights)
    expected = _spreadsheet_report(returns.tolist(), rf.tolist(), weights.tolist())

    for key, value in expected.items():
        assert getattr(report, key) == pytest.approx(value, rel=1e-10, abs=1e-10), key


def test_downside_dev_bounded_by_root_mean_square():
    returns = np.random.default_rng(1).normal(0.0, 0.01, size=500)
    report = performance_report(returns, np.zeros(500))
    assert report.downside_dev <= math.sqrt(252 * np.mean(returns**2)) + 1e-15


def test_doubling_log_growth_doubles_log_annual_return():
    log_returns = np.random.default_rng(2).normal(0.0003, 0.01, size=756)
    single = performance_report(np.expm1(log_returns), np.zeros(756))
    doubled = performance_report(np.expm1(2.0 * log_returns), np.zeros(756))
    assert math.log1p(doubled.ann_return) == pytest.approx(2.0 * math.log1p(single.ann_return), rel=1e-10)


def test_misaligned_inputs_raise():
    with pytest.raises(MetricsError):
        performance_report([0.01, 0.02], [0.0])
    with pytest.raises(MetricsError):
        performance_report([], [])


def test_table_rows_follow_reporting_order_and_mark_undefined():
    defined = performance_report([0.01, -0.02, 0.015], [0.0001] * 3, [1.0, 0.0, 1.0])
    flat = performance_report([0.0, 0.0, 0.0], [0.0] * 3)

    table = format_report_table({"strategy": defined, "benchmark": flat})
    lines = table.splitlines()

    assert lines[0].split() == ["strategy", "benchmark"]
    assert [line.split()[0] for line in lines[1:]] == list(MetricReport.ROW_LABELS)
    sharpe_row = next(line for line in lines if line.startswith("Sharpe"))
    assert sharpe_row.split()[-1] == "n/a"
    assert "nan" not in table


def test_report_survives_json_round_trip():
    dates = pd.bdate_range("2020-01-01", periods=4)
    report = performance_report([0.01, -0.03, 0.02, 0.0], [0.0] * 4, dates=dates)
    assert MetricReport.from_dict(report.to_dict()) == report


def test_service_reports_strategy_and_benchmark():
    dates = pd.bdate_range("2021-01-01", periods=6)
    returns = np.array([0.01, -0.02, 0.005, 0.0, 0.01, -0.01])
    result = simulate_allocation(
        dates,
        np.array([0, 0, 1, 1, 0, 0, 0]),
        returns,
        np.full(6, 0.0001),
        0.001,
        engine="jm",
        jump_penalty=5.0,
    )
    service = MetricsService()

    strategy = service.strategy(result)
    benchmark = service.benchmark(result)

    assert strategy.avg_daily_turnover == pytest.approx(2 / 6)
    assert benchmark.avg_daily_turnover == 0.0
    assert benchmark == performance_report(returns, np.full(6, 0.0001), dates=dates)
