"""Run configuration DTOs validated before entering the service layer."""

from __future__ import annotations

import hashlib
import json
from datetime import date
from pathlib import Path
from typing import Any, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, model_validator

from regime_allocator.domain.constraints import validate_split_spec, validate_walk_forward_config
from regime_allocator.domain.models import SplitSpec, SynthSpec, WalkForwardConfig
from regime_allocator.repository.data_repository import CsvSchema, DataFileNotFoundError
from regime_allocator.utils.config import Settings


def canonical_hash(payload: Any) -> str:
    """sha256 of the canonical JSON form (sorted keys, no whitespace)."""
    encoded = json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(encoded.encode("utf-8")).hexdigest()


def _read_json_file(path: Union[str, Path]) -> dict[str, Any]:
    file_path = Path(path)
    if not file_path.is_file():
        raise DataFileNotFoundError(file_path)
    return json.loads(file_path.read_text(encoding="utf-8"))


class SeriesSource(BaseModel):
    model_config = ConfigDict(extra="forbid")

    path: str = Field(min_length=1)
    date_column: str = "date"
    value_column: str = "value"
    date_format: str = "%Y-%m-%d"

    def csv_schema(self) -> CsvSchema:
        return CsvSchema(
            date_column=self.date_column,
            value_column=self.value_column,
            date_format=self.date_format,
        )


class YieldSource(SeriesSource):
    in_percent: bool = False


class SplitConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    train_end: date
    validation_end: date
    test_end: date

    @model_validator(mode="after")
    def validate_order(self) -> "SplitConfig":
        validate_split_spec(self.to_split_spec())
        return self

    def to_split_spec(self) -> SplitSpec:
        return SplitSpec(
            train_end=self.train_end,
            validation_end=self.validation_end,
            test_end=self.test_end,
        )


class HmmOptions(BaseModel):
    model_config = ConfigDict(extra="forbid")

    median_window: Optional[int] = Field(default=None, ge=1)
    decoder: Optional[Literal["smoothed", "viterbi"]] = None


class RunConfig(BaseModel):
    """Declarative description of one run; unset fields fall back to Settings."""

    model_config = ConfigDict(extra="forbid")

    prices: Optional[SeriesSource] = None
    yields: Optional[YieldSource] = None
    split: Optional[SplitConfig] = None
    engine: Literal["jm", "hmm"] = "jm"
    jump_penalty: Optional[float] = Field(default=None, ge=0.0)
    lambda_grid: Optional[list[float]] = Field(default=None, min_length=1)
    cost_bps: Optional[float] = Field(default=None, ge=0.0)
    seed: Optional[int] = Field(default=None, ge=0)
    refit_every: Optional[int] = Field(default=None, ge=1)
    lookback: Optional[int] = Field(default=None, ge=252)
    n_states: Optional[int] = Field(default=None, ge=1)
    n_restarts: Optional[int] = Field(default=None, ge=1)
    output_dir: Optional[str] = None
    hmm: HmmOptions = Field(default_factory=HmmOptions)
    compare_hmm: bool = False

    _base_dir: Path = PrivateAttr(default_factory=Path.cwd)

    @classmethod
    def load(cls, path: Optional[Union[str, Path]]) -> "RunConfig":
        """Parse a JSON config; data paths resolve against the config file's directory."""
        if path is None:
            return cls()
        config = cls.model_validate(_read_json_file(path))
        config._base_dir = Path(path).resolve().parent
        return config

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        updates = {key: value for key, value in overrides.items() if value is not None}
        if not updates:
            return self
        merged = type(self).model_validate({**self.model_dump(), **updates})
        merged._base_dir = self._base_dir
        return merged

    def resolve(self, path: str) -> Path:
        candidate = Path(path)
        return candidate if candidate.is_absolute() else self._base_dir / candidate

    def config_hash(self) -> str:
        return canonical_hash(self.model_dump(mode="json"))

    def resolved_seed(self, settings: Settings) -> int:
        return self.seed if self.seed is not None else settings.random_seed

    def require_data(self) -> tuple[SeriesSource, YieldSource]:
        if self.prices is None or self.yields is None:
            raise ValueError("config must name both a prices and a yields source")
        return self.prices, self.yields

    def require_split(self) -> SplitSpec:
        if self.split is None:
            raise ValueError("config must define split dates")
        return self.split.to_split_spec()

    def walk_forward_config(self, settings: Settings, engine: Optional[str] = None) -> WalkForwardConfig:
        """Engine parameters with Settings defaults, validated against domain constraints."""
        chosen = engine or self.engine
        is_hmm = chosen == "hmm"
        default_refit = settings.hmm_refit_interval_days if is_hmm else settings.jm_refit_interval_days
        default_restarts = settings.hmm_n_restarts if is_hmm else settings.jm_n_restarts
        use_own_refit = self.refit_every is not None and chosen == self.engine
        config = WalkForwardConfig(
            lookback_days=self.lookback or settings.lookback_days,
            refit_interval_days=self.refit_every if use_own_refit else default_refit,
            n_states=self.n_states or settings.jm_n_states,
            jump_penalty=None if is_hmm else self.jump_penalty,
            lambda_grid=tuple(self.lambda_grid) if self.lambda_grid else settings.lambda_grid,
            cost_per_side=(self.cost_bps / 10_000.0) if self.cost_bps is not None else settings.cost_per_side,
            engine=chosen,
            seed=self.resolved_seed(settings),
            n_restarts=self.n_restarts or default_restarts,
            max_iter=settings.jm_max_iter,
            hmm_max_iter=settings.hmm_max_iter,
            hmm_tol=settings.hmm_tol,
            hmm_std_floor=settings.hmm_std_floor,
            median_window=self.hmm.median_window or settings.hmm_median_window,
            hmm_decoder=self.hmm.decoder or settings.hmm_decoder,
        )
        validate_walk_forward_config(config)
        return config


class SynthSpecConfig(BaseModel):
    """JSON form of a synthetic market specification."""

    model_config = ConfigDict(extra="forbid")

    n_days: int = Field(ge=1)
    state_means: list[float] = Field(min_length=1)
    state_stds: list[float] = Field(min_length=1)
    transitions: list[list[float]]
    initial_state: int = Field(default=0, ge=0)
    annual_yield: float = 0.0
    seed: int = Field(default=0, ge=0)
    start_date: date = date(2000, 1, 3)
    initial_price: float = Field(default=100.0, gt=0.0)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "SynthSpecConfig":
        return cls.model_validate(_read_json_file(path))

    def config_hash(self) -> str:
        return canonical_hash(self.model_dump(mode="json"))

    def to_spec(self) -> SynthSpec:
        return SynthSpec(
            n_days=self.n_days,
            state_means=tuple(self.state_means),
            state_stds=tuple(self.state_stds),
            transitions=tuple(tuple(row) for row in self.transitions),
            initial_state=self.initial_state,
            annual_yield=self.annual_yield,
            seed=self.seed,
            start_date=self.start_date.isoformat(),
            initial_price=self.initial_price,
        )
