"""
app.py - application factory.

Wires the repository and every service from one Settings object so the CLI
(and tests) can obtain a fully connected application without globals.

Usage (via launcher):
    python main.py backtest --config run.json --out out/
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from regime_allocator.repository.data_repository import MarketDataRepository
from regime_allocator.services.backtest_service import BacktestService
from regime_allocator.services.feature_service import FeatureService
from regime_allocator.services.hmm_service import HmmService
from regime_allocator.services.jump_model_service import JumpModelService
from regime_allocator.services.market_data_service import MarketDataService
from regime_allocator.services.metrics_service import MetricsService
from regime_allocator.services.synth_service import SynthService
from regime_allocator.utils.config import Settings, get_settings
from regime_allocator.utils.logger import get_logger


logger = get_logger(__name__)


@dataclass(frozen=True)
class Application:
    settings: Settings
    repository: MarketDataRepository
    market_data_service: MarketDataService
    feature_service: FeatureService
    jump_model_service: JumpModelService
    hmm_service: HmmService
    metrics_service: MetricsService
    backtest_service: BacktestService
    synth_service: SynthService


def create_app(
    settings: Optional[Settings] = None,
    output_dir: Optional[Union[str, Path]] = None,
) -> Application:
    """
    Build and wire the application.

    Every dependency is traceable from this function; services receive the
    repository and settings explicitly.
    """
    settings = settings or get_settings()

    # --- Repository (all file access) ---
    repository = MarketDataRepository(settings, output_dir=output_dir)

    # --- Services (computation only, no file access) ---
    feature_service = FeatureService(settings)
    metrics_service = MetricsService(settings)
    application = Application(
        settings=settings,
        repository=repository,
        market_data_service=MarketDataService(repository=repository, settings=settings),
        feature_service=feature_service,
        jump_model_service=JumpModelService(settings),
        hmm_service=HmmService(settings),
        metrics_service=metrics_service,
        backtest_service=BacktestService(
            feature_service=feature_service,
            settings=settings,
            metrics_service=metrics_service,
        ),
        synth_service=SynthService(settings),
    )
    logger.debug(
        "Application wired | name=%s | version=%s | output_dir=%s",
        settings.app_name,
        settings.app_version,
        repository.output_dir,
    )
    return application
