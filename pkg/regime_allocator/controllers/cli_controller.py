"""Command-line controller: parses flags, calls services and writes artifacts.

Exit codes: 0 success, 1 completed with a computation warning (degenerate
fit), 2 configuration or data error. Errors are reported as one JSON object
on stdout; logs go to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional, Sequence, TextIO

import numpy as np
import pandas as pd

from regime_allocator.controllers.dependencies import (
    AppFactory,
    default_app_factory,
    output_dir_for_run,
    provenance_for_run,
    settings_for_run,
)
from regime_allocator.controllers.run_config import RunConfig, SynthSpecConfig
from regime_allocator.domain.models import (
    ENGINE_HMM,
    ENGINE_JUMP_MODEL,
    SUPPORTED_ENGINES,
    AlignedSeries,
    MarketDataset,
    MetricReport,
    state_intervals,
)
from regime_allocator.repository.data_repository import (
    MarketDataError,
    OutputPathError,
    Provenance,
)
from regime_allocator.services.backtest_service import (
    BENCHMARK_COLUMN,
    HMM_COLUMN,
    STRATEGY_COLUMN,
    BacktestError,
    regime_summary,
)
from regime_allocator.services.feature_service import (
    FeatureError,
    apply_standardizer,
    fit_standardizer,
)
from regime_allocator.services.hmm_service import HmmError
from regime_allocator.services.jump_model_service import (
    JumpModelError,
    estimate_transitions,
    summarize_regimes,
)
from regime_allocator.services.market_data_service import dataset_summary
from regime_allocator.services.metrics_service import MetricsError
from regime_allocator.services.synth_service import SynthError, price_series
from regime_allocator.utils.config import Settings, get_settings
from regime_allocator.utils.logger import bind_run_context, configure_logging, get_logger


logger = get_logger(__name__)

EXIT_OK = 0
EXIT_WARNING = 1
EXIT_ERROR = 2

CONFIG_ERRORS = (
    ValueError,
    MarketDataError,
    FeatureError,
    JumpModelError,
    HmmError,
    BacktestError,
    MetricsError,
    SynthError,
    OutputPathError,
)

REPORT_COLUMNS = (STRATEGY_COLUMN, BENCHMARK_COLUMN, HMM_COLUMN)


@dataclass(frozen=True)
class CommandContext:
    args: argparse.Namespace
    run_config: RunConfig
    settings: Settings
    app: Any
    provenance: Provenance
    stdout: TextIO

    @property
    def repository(self):
        return self.app.repository


def _grid(text: str) -> list[float]:
    try:
        values = [float(item) for item in text.split(",") if item.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid lambda grid {text!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("lambda grid must not be empty")
    return values


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--engine", choices=SUPPORTED_ENGINES)
    common.add_argument("--lambda", dest="jump_penalty", type=float, help="jump penalty")
    common.add_argument("--grid", type=_grid, help="comma-separated jump penalty grid")
    common.add_argument("--cost-bps", dest="cost_bps", type=float, help="one-way cost in basis points")
    common.add_argument("--seed", type=int)
    common.add_argument("--refit-every", dest="refit_every", type=int, help="trading days between refits")
    common.add_argument("--lookback", type=int, help="estimation window in trading days")
    common.add_argument("--out", help="output directory")

    parser = argparse.ArgumentParser(
        prog="regime-allocator",
        description="Regime identification and regime-aware 0/1 allocation.",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("ingest", parents=[common], help="align prices and yields into dataset.csv")
    commands.add_parser("features", parents=[common], help="write the standard feature set")
    commands.add_parser("fit", parents=[common], help="fit one model on the trailing window")
    commands.add_parser("cv", parents=[common], help="select the jump penalty on the validation span")
    commands.add_parser("backtest", parents=[common], help="evaluate the strategy on the test span")
    synth = commands.add_parser("synth", parents=[common], help="simulate a regime-switching market")
    synth.add_argument("--spec", required=True, help="JSON synthetic market specification")
    commands.add_parser("report", parents=[common], help="render report.txt from result.json")
    return parser


def _emit(stdout: TextIO, payload: dict[str, Any]) -> None:
    stdout.write(json.dumps(payload, sort_keys=True) + "\n")


def _ok(context: CommandContext, artifacts: Sequence[Path], exit_code: int = EXIT_OK) -> int:
    _emit(
        context.stdout,
        {
            "status": "ok" if exit_code == EXIT_OK else "warning",
            "command": context.args.command,
            "artifacts": [path.name for path in artifacts],
            "config_hash": context.provenance.config_hash,
        },
    )
    return exit_code


def _iso(value: pd.Timestamp) -> str:
    return value.date().isoformat()


def _records(frame: pd.DataFrame) -> list[dict[str, Any]]:
    cleaned = frame.reset_index().astype(object)
    cleaned = cleaned.where(cleaned.notna(), None)
    return cleaned.to_dict(orient="records")


def _load_dataset(context: CommandContext) -> MarketDataset:
    config = context.run_config
    prices, yields = config.require_data()
    return context.app.market_data_service.load_dataset(
        config.resolve(prices.path),
        prices.csv_schema(),
        config.resolve(yields.path),
        yields.csv_schema(),
        yields_in_percent=yields.in_percent,
    )


def cmd_ingest(context: CommandContext) -> int:
    dataset = _load_dataset(context)
    summary = dataset_summary(dataset, context.settings.trading_days_per_year)
    artifacts = [
        context.repository.write_frame_csv("dataset.csv", dataset.to_frame(), context.provenance),
        context.repository.write_json("dataset_summary.json", summary, context.provenance),
    ]
    return _ok(context, artifacts)


def cmd_features(context: CommandContext) -> int:
    dataset = _load_dataset(context)
    features = context.app.feature_service.build(dataset)
    path = context.repository.write_frame_csv("features.csv", features.to_frame(), context.provenance)
    return _ok(context, [path])


def _fit_end(context: CommandContext, dataset: MarketDataset) -> int:
    if context.run_config.split is None:
        return len(dataset) - 1
    train_end = pd.Timestamp(context.run_config.split.train_end)
    end = int(dataset.dates.searchsorted(train_end, side="right")) - 1
    if end < 0:
        raise ValueError(f"no trading days on or before train_end {train_end.date()}")
    return end


def cmd_fit(context: CommandContext) -> int:
    dataset = _load_dataset(context)
    config = context.run_config.walk_forward_config(context.settings)
    end = _fit_end(context, dataset)
    tdpy = context.settings.trading_days_per_year
    returns = np.asarray(dataset.index_returns.values)
    payload: dict[str, Any] = {"engine": config.engine}
    exit_code = EXIT_OK

    if config.engine == ENGINE_JUMP_MODEL:
        if config.jump_penalty is None:
            raise ValueError("fitting the jump model needs a jump penalty (--lambda or jump_penalty)")
        features = context.app.feature_service.build(dataset)
        window = range(max(features.warmup, end - config.lookback_days + 1), end + 1)
        params = fit_standardizer(features, window)
        standardized = apply_standardizer(features, params, window)
        window_returns = returns[window.start:window.stop]
        fit = context.app.jump_model_service.fit(
            standardized.rows,
            config.jump_penalty,
            seed=config.seed,
            n_states=config.n_states,
            raw_returns=window_returns,
        )
        payload.update(
            {
                "feature_names": list(features.feature_names),
                "standardization": params.to_dict(),
                "model": fit.to_dict(standardized.dates),
                "transition_matrix": estimate_transitions(fit.states, fit.n_states).matrix.tolist(),
                "regime_statistics": summarize_regimes(fit.states, window_returns, fit.n_states, tdpy),
            }
        )
        if fit.degenerate:
            exit_code = EXIT_WARNING
    else:
        window = range(max(0, end - config.lookback_days + 1), end + 1)
        window_returns = returns[window.start:window.stop]
        log_returns = np.asarray(dataset.log_returns.values[window.start:window.stop])
        model = context.app.hmm_service.fit(log_returns, seed=config.seed, n_states=config.n_states)
        states = context.app.hmm_service.decode(model, log_returns, config.hmm_decoder)
        window_dates = dataset.dates[window.start:window.stop]
        payload.update(
            {
                "model": {**model.to_dict(), "state_intervals": state_intervals(states, window_dates)},
                "decoder": config.hmm_decoder,
                "regime_statistics": summarize_regimes(states, window_returns, model.n_states, tdpy),
            }
        )

    payload["window_start"] = _iso(dataset.dates[window.start])
    payload["window_end"] = _iso(dataset.dates[window.stop - 1])
    path = context.repository.write_json("model.json", payload, context.provenance)
    return _ok(context, [path], exit_code)


def cmd_cv(context: CommandContext) -> int:
    dataset = _load_dataset(context)
    config = context.run_config.walk_forward_config(context.settings)
    if config.engine != ENGINE_JUMP_MODEL:
        raise ValueError("cv selects the jump penalty and needs engine 'jm'")
    split = context.run_config.require_split()
    selection = context.app.backtest_service.select_lambda(dataset, config, split)
    artifacts = [
        context.repository.write_frame_csv("cv_table.csv", selection.table, context.provenance, index_label="lambda"),
        context.repository.write_json("chosen_lambda.json", selection.to_dict(), context.provenance),
    ]
    chosen = selection.results[selection.chosen_lambda]
    return _ok(context, artifacts, EXIT_WARNING if chosen.degenerate_refit_dates else EXIT_OK)


def cmd_backtest(context: CommandContext) -> int:
    dataset = _load_dataset(context)
    run_config = context.run_config
    config = run_config.walk_forward_config(context.settings)
    split = run_config.require_split()

    selection = None
    if config.engine == ENGINE_JUMP_MODEL and config.jump_penalty is None:
        selection = context.app.backtest_service.select_lambda(dataset, config, split)
        config = config.with_penalty(selection.chosen_lambda)

    compare_hmm = run_config.compare_hmm and config.engine == ENGINE_JUMP_MODEL
    hmm_config = run_config.walk_forward_config(context.settings, engine=ENGINE_HMM) if compare_hmm else None
    evaluation = context.app.backtest_service.evaluate_test(
        dataset,
        config,
        split,
        compare_hmm=compare_hmm,
        hmm_config=hmm_config,
    )
    result = evaluation.result
    tdpy = context.settings.trading_days_per_year
    hmm_echo = hmm_config if hmm_config is not None else config

    payload: dict[str, Any] = {
        "engine": config.engine,
        "jump_penalty": config.jump_penalty,
        "chosen_lambda": selection.chosen_lambda if selection is not None else config.jump_penalty,
        "config": run_config.model_dump(mode="json"),
        "walk_forward": {
            "lookback_days": config.lookback_days,
            "refit_interval_days": config.refit_interval_days,
            "n_states": config.n_states,
            "cost_per_side": config.cost_per_side,
            "n_restarts": config.n_restarts,
        },
        "hmm": {
            "median_window": hmm_echo.median_window,
            "decoder": hmm_echo.hmm_decoder,
            "refit_interval_days": hmm_echo.refit_interval_days,
        },
        "split": split.to_dict(),
        "test_start": _iso(result.dates[0]),
        "test_end": _iso(result.dates[-1]),
        "metrics": {name: report.to_dict() for name, report in evaluation.reports.items()},
        "refit_dates": [_iso(value) for value in result.refit_dates],
        "degenerate_refit_dates": [_iso(value) for value in result.degenerate_refit_dates],
        "n_reallocations": result.n_reallocations,
        "n_regime_shifts": result.n_regime_shifts,
        "fraction_in_cash": result.fraction_in_cash,
        "next_forecast": result.next_forecast,
        "regime_intervals": [{"start": _iso(start), "end": _iso(end)} for start, end in result.regime_intervals],
        "regime_summary": regime_summary(result, tdpy),
        "validation": _records(selection.table) if selection is not None else None,
    }

    equity = result.to_frame()[["index_equity", "strategy_equity"]]
    if evaluation.hmm_result is not None:
        equity = equity.assign(hmm_equity=np.array(evaluation.hmm_result.equity_curve))
    regimes = pd.DataFrame(
        {
            "start": [_iso(start) for start, _ in result.regime_intervals],
            "end": [_iso(end) for _, end in result.regime_intervals],
        }
    )
    repository = context.repository
    table = context.app.metrics_service.table(evaluation.reports)
    artifacts = [
        repository.write_json("result.json", payload, context.provenance),
        repository.write_frame_csv("equity.csv", equity, context.provenance),
        repository.write_frame_csv("regimes.csv", regimes, context.provenance, index_label=None),
        repository.write_text("report.txt", table, context.provenance),
    ]
    return _ok(context, artifacts, EXIT_WARNING if result.degenerate_refit_dates else EXIT_OK)


def cmd_report(context: CommandContext) -> int:
    payload = context.repository.read_json("result.json")
    try:
        metrics = payload["metrics"]
        order = [name for name in REPORT_COLUMNS if name in metrics]
        order += sorted(name for name in metrics if name not in REPORT_COLUMNS)
        reports = {name: MetricReport.from_dict(metrics[name]) for name in order}
        provenance = Provenance(config_hash=payload["config_hash"], seed=int(payload["seed"]))
    except (KeyError, TypeError, AttributeError) as exc:
        raise ValueError(f"result.json is malformed: {exc}") from exc
    table = context.app.metrics_service.table(reports)
    context.repository.write_text("report.txt", table, provenance)
    context.stdout.write(table + "\n")
    return EXIT_OK


def cmd_synth(context: CommandContext) -> int:
    spec_config = SynthSpecConfig.load(context.args.spec)
    if context.args.seed is not None:
        spec_config = spec_config.model_copy(update={"seed": context.args.seed})
    spec = spec_config.to_spec()
    provenance = Provenance(config_hash=spec_config.config_hash(), seed=spec.seed)
    bind_run_context(provenance.config_hash, provenance.seed)
    context = CommandContext(
        args=context.args,
        run_config=context.run_config,
        settings=context.settings,
        app=context.app,
        provenance=provenance,
        stdout=context.stdout,
    )

    dataset, states = context.app.synth_service.simulate(spec)
    prices = price_series(dataset)
    yields = AlignedSeries(dates=prices.dates, values=np.full(len(prices), spec.annual_yield))
    state_frame = pd.DataFrame({"state": states}, index=dataset.dates)
    repository = context.repository
    artifacts = [
        repository.write_series_csv("prices.csv", prices, "value", provenance),
        repository.write_series_csv("yields.csv", yields, "value", provenance),
        repository.write_frame_csv("states.csv", state_frame, provenance),
    ]
    return _ok(context, artifacts)


COMMANDS: dict[str, Callable[[CommandContext], int]] = {
    "ingest": cmd_ingest,
    "features": cmd_features,
    "fit": cmd_fit,
    "cv": cmd_cv,
    "backtest": cmd_backtest,
    "synth": cmd_synth,
    "report": cmd_report,
}


def _build_context(
    args: argparse.Namespace,
    base_settings: Settings,
    app_factory: AppFactory,
    stdout: TextIO,
) -> CommandContext:
    run_config = RunConfig.load(args.config).with_overrides(
        engine=args.engine,
        jump_penalty=args.jump_penalty,
        lambda_grid=args.grid,
        cost_bps=args.cost_bps,
        seed=args.seed,
        refit_every=args.refit_every,
        lookback=args.lookback,
    )
    settings = settings_for_run(run_config, base_settings)
    output_dir = output_dir_for_run(run_config, settings, args.out)
    return CommandContext(
        args=args,
        run_config=run_config,
        settings=settings,
        app=app_factory(settings, output_dir),
        provenance=provenance_for_run(run_config, settings),
        stdout=stdout,
    )


def run(
    argv: Optional[Sequence[str]] = None,
    *,
    settings: Optional[Settings] = None,
    app_factory: Optional[AppFactory] = None,
    stdout: Optional[TextIO] = None,
) -> int:
    args = build_parser().parse_args(argv)
    base_settings = settings or get_settings()
    configure_logging(base_settings.log_level)
    output = stdout or sys.stdout
    factory = app_factory or default_app_factory()

    try:
        context = _build_context(args, base_settings, factory, output)
        bind_run_context(context.provenance.config_hash, context.provenance.seed)
        exit_code = COMMANDS[args.command](context)
    except CONFIG_ERRORS as exc:
        logger.error("Command failed | command=%s | error_type=%s | message=%s", args.command, type(exc).__name__, exc)
        _emit(
            output,
            {
                "status": "error",
                "error_type": type(exc).__name__,
                "message": str(exc),
                "path": getattr(exc, "path", None),
            },
        )
        return EXIT_ERROR

    logger.info("Command completed | command=%s | exit_code=%s", args.command, exit_code)
    return exit_code
