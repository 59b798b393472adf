"""Repository layer responsible for all file access."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Any, Optional, Union

import pandas as pd

from regime_allocator.domain.models import AlignedSeries
from regime_allocator.utils.config import Settings, get_settings
from regime_allocator.utils.logger import get_logger


logger = get_logger(__name__)

PathLike = Union[str, Path]


class MarketDataError(Exception):
    """Base exception for market data ingestion and alignment failures."""


class DataFileNotFoundError(MarketDataError):
    """Raised when an input file does not exist or cannot be read."""

    def __init__(self, path: PathLike, detail: str = "file not found") -> None:
        super().__init__(f"{detail}: {path}")
        self.path = str(path)


class MalformedRowError(MarketDataError):
    """Raised when a CSV row cannot be parsed under the configured schema."""

    def __init__(self, path: PathLike, line_number: int, detail: str) -> None:
        super().__init__(f"{path}: malformed row at line {line_number}: {detail}")
        self.path = str(path)
        self.line_number = line_number


class DuplicateDateError(MalformedRowError):
    """Raised when the same date appears twice in one file."""


class NonFiniteValueError(MalformedRowError):
    """Raised when a parsed value is NaN or infinite."""


class OutputPathError(Exception):
    """Raised when an artifact would be written outside the output directory."""


@dataclass(frozen=True)
class CsvSchema:
    date_column: str = "date"
    value_column: str = "value"
    date_format: str = "%Y-%m-%d"


@dataclass(frozen=True)
class Provenance:
    """Config hash and seed stamped into every artifact."""

    config_hash: str
    seed: int

    def header_line(self) -> str:
        return f"# config_hash={self.config_hash} seed={self.seed}"


def load_csv(path: PathLike, schema: CsvSchema) -> AlignedSeries:
    """Parse a two-column date/value CSV into a date-sorted series.

    Leading lines starting with ``#`` are metadata. Line numbers in errors are
    file line numbers (the header is line 1 when no metadata precedes it).
    """
    file_path = Path(path)
    if not file_path.is_file():
        raise DataFileNotFoundError(file_path)
    try:
        with file_path.open("r", newline="", encoding="utf-8") as handle:
            lines = handle.read().splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise DataFileNotFoundError(file_path, detail=f"cannot read file ({exc})") from exc

    offset = 0
    while offset < len(lines) and lines[offset].startswith("#"):
        offset += 1
    header_line_number = offset + 1
    reader = csv.DictReader(lines[offset:])
    fieldnames = reader.fieldnames or []
    missing = [
        column
        for column in (schema.date_column, schema.value_column)
        if column not in fieldnames
    ]
    if missing:
        raise MalformedRowError(
            file_path,
            header_line_number,
            f"header is missing columns {missing}",
        )

    values_by_date: dict[pd.Timestamp, float] = {}
    for line_number, raw_row in enumerate(reader, start=header_line_number + 1):
        raw_date = (raw_row.get(schema.date_column) or "").strip()
        raw_value = (raw_row.get(schema.value_column) or "").strip()
        if not raw_date or not raw_value:
            raise MalformedRowError(file_path, line_number, "missing value")
        try:
            parsed_date = pd.Timestamp(datetime.strptime(raw_date, schema.date_format))
        except ValueError as exc:
            raise MalformedRowError(
                file_path,
                line_number,
                f"date {raw_date!r} does not match {schema.date_format}",
            ) from exc
        try:
            value = float(raw_value)
        except ValueError as exc:
            raise MalformedRowError(
                file_path,
                line_number,
                f"value {raw_value!r} is not a number",
            ) from exc
        if not math.isfinite(value):
            raise NonFiniteValueError(file_path, line_number, f"value {raw_value!r} is not finite")
        if parsed_date in values_by_date:
            raise DuplicateDateError(file_path, line_number, f"duplicate date {raw_date}")
        values_by_date[parsed_date] = value

    series = pd.Series(values_by_date, dtype=float)
    result = AlignedSeries.from_series(series)
    logger.info(
        "CSV series loaded | path=%s | column=%s | rows=%s",
        file_path,
        schema.value_column,
        len(result),
    )
    return result


class MarketDataRepository:
    """Owns reading inputs and writing artifacts so services stay storage-agnostic."""

    def __init__(
        self,
        settings: Optional[Settings] = None,
        output_dir: Optional[PathLike] = None,
    ) -> None:
        self._settings = settings or get_settings()
        self._output_dir = Path(output_dir) if output_dir is not None else Path(self._settings.output_dir)

    @property
    def output_dir(self) -> Path:
        return self._output_dir

    def load_series(self, path: PathLike, schema: CsvSchema) -> AlignedSeries:
        return load_csv(path, schema)

    def _resolve_output(self, filename: str) -> Path:
        root = self._output_dir.resolve()
        target = (root / filename).resolve()
        if not target.is_relative_to(root):
            raise OutputPathError(f"{filename} resolves outside the output directory {root}")
        target.parent.mkdir(parents=True, exist_ok=True)
        return target

    def write_json(self, filename: str, payload: dict[str, Any], provenance: Provenance) -> Path:
        target = self._resolve_output(filename)
        document = {"config_hash": provenance.config_hash, "seed": provenance.seed, **payload}
        target.write_text(
            json.dumps(document, indent=2, sort_keys=True, allow_nan=False) + "\n",
            encoding="utf-8",
        )
        logger.info("Artifact written | path=%s", target)
        return target

    def read_json(self, filename: str) -> dict[str, Any]:
        target = self._resolve_output(filename)
        if not target.is_file():
            raise DataFileNotFoundError(target)
        return json.loads(target.read_text(encoding="utf-8"))

    def write_frame_csv(
        self,
        filename: str,
        frame: pd.DataFrame,
        provenance: Provenance,
        *,
        index_label: Optional[str] = "date",
    ) -> Path:
        target = self._resolve_output(filename)
        output = frame.copy()
        if isinstance(output.index, pd.DatetimeIndex):
            output.index = output.index.strftime("%Y-%m-%d")
        with target.open("w", newline="", encoding="utf-8") as handle:
            handle.write(provenance.header_line() + "\n")
            output.to_csv(
                handle,
                index=index_label is not None,
                index_label=index_label,
                lineterminator="\n",
            )
        logger.info("Artifact written | path=%s | rows=%s", target, len(output))
        return target

    def write_series_csv(
        self,
        filename: str,
        series: AlignedSeries,
        value_column: str,
        provenance: Provenance,
    ) -> Path:
        frame = series.to_series(name=value_column).to_frame()
        return self.write_frame_csv(filename, frame, provenance)

    def write_text(self, filename: str, text: str, provenance: Provenance) -> Path:
        target = self._resolve_output(filename)
        target.write_text(provenance.header_line() + "\n" + text.rstrip("\n") + "\n", encoding="utf-8")
        logger.info("Artifact written | path=%s", target)
        return target
