import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import pandas as pd
from dagster import get_dagster_logger

from common.errors import MalformedDataError
from common.settings import get_settings

logger = get_dagster_logger(__name__)

FLOAT_FORMAT = "%.17g"


@dataclass(frozen=True)
class CsvSchema:
    timestamp_column: str = "timestamp"
    power_prefix: str = "power_"
    forecast_prefix: str = "forecast_"
    capacities: dict = None  # farm id -> capacity; missing ids count as 1.0
    normalize: bool = True
    malformed_threshold: float = 0.01


@dataclass(frozen=True, eq=False)
class WideTable:
    """timestamp, power_<id>..., forecast_<id>... with one row per hour"""

    frame: pd.DataFrame
    farm_ids: tuple
    capacities: tuple = None
    schema: CsvSchema = field(default_factory=CsvSchema, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "farm_ids", tuple(str(f) for f in self.farm_ids))
        if self.capacities is None:
            object.__setattr__(self, "capacities", (1.0,) * len(self.farm_ids))

    @property
    def n_farms(self):
        return len(self.farm_ids)

    @property
    def n_rows(self):
        return len(self.frame)

    @property
    def power_columns(self):
        return [f"{self.schema.power_prefix}{f}" for f in self.farm_ids]

    @property
    def forecast_columns(self):
        return [f"{self.schema.forecast_prefix}{f}" for f in self.farm_ids]

    @property
    def power(self):
        return self.frame[self.power_columns].to_numpy(dtype=float)

    @property
    def forecast(self):
        return self.frame[self.forecast_columns].to_numpy(dtype=float)

    @property
    def stacked(self):
        """(N, 2M) observations: all power columns, then all forecast columns"""
        return np.hstack([self.power, self.forecast]) if self.n_farms else np.empty((self.n_rows, 0))

    @property
    def timestamps(self):
        return self.frame[self.schema.timestamp_column]

    def to_csv(self, path):
        self.frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
        return path


@dataclass
class LoadReport:
    path: str
    rows_read: int = 0
    rows_kept: int = 0
    dropped_missing: int = 0
    dropped_malformed: int = 0
    non_monotone_timestamps: bool = False

    def to_dict(self):
        return asdict(self)


def wide_columns(farm_ids, schema=None):
    schema = schema or CsvSchema()
    return (
        [schema.timestamp_column]
        + [f"{schema.power_prefix}{f}" for f in farm_ids]
        + [f"{schema.forecast_prefix}{f}" for f in farm_ids]
    )


def farm_ids_from_columns(columns, schema):
    power = [c[len(schema.power_prefix) :] for c in columns if c.startswith(schema.power_prefix)]
    forecast = [c[len(schema.forecast_prefix) :] for c in columns if c.startswith(schema.forecast_prefix)]
    if schema.timestamp_column not in columns:
        raise MalformedDataError(f"Missing timestamp column {schema.timestamp_column!r}")
    if sorted(power) != sorted(forecast):
        raise MalformedDataError(f"Power farms {power} and forecast farms {forecast} differ")
    return tuple(power)


def normalize_capacity(table):
    """Divide every farm's columns by its capacity; a normalized table is left unchanged"""
    if all(c == 1.0 for c in table.capacities):
        return table
    frame = table.frame.copy()
    for farm, capacity in zip(table.farm_ids, table.capacities):
        if capacity <= 0:
            raise MalformedDataError(f"Farm {farm} has non-positive capacity {capacity}")
        for prefix in (table.schema.power_prefix, table.schema.forecast_prefix):
            frame[f"{prefix}{farm}"] = frame[f"{prefix}{farm}"] / capacity
    return replace(table, frame=frame, capacities=(1.0,) * table.n_farms)


def _count_data_lines(path):
    with open(path, "r", encoding="utf-8") as handle:
        return max(0, sum(1 for line in handle if line.strip()) - 1)


def load_csv(path, schema=None):
    """Parse a wide CSV into a capacity-normalized WideTable; returns (table, report)"""
    schema = schema or CsvSchema()
    report = LoadReport(path=str(path))
    lines = _count_data_lines(path)
    frame = pd.read_csv(path, float_precision="round_trip", on_bad_lines="skip", dtype={schema.timestamp_column: str})
    farm_ids = farm_ids_from_columns(list(frame.columns), schema)
    value_columns = wide_columns(farm_ids, schema)[1:]
    report.rows_read = lines

    malformed = np.zeros(len(frame), dtype=bool)
    for column in value_columns:
        if frame[column].dtype == object:
            parsed = pd.to_numeric(frame[column], errors="coerce")
            malformed |= (parsed.isna() & frame[column].notna()).to_numpy()
            frame[column] = parsed
    missing = frame[[schema.timestamp_column] + value_columns].isna().any(axis=1).to_numpy() & ~malformed
    report.dropped_malformed = int(lines - len(frame) + malformed.sum())
    report.dropped_missing = int(missing.sum())
    if lines and report.dropped_malformed / lines > schema.malformed_threshold:
        raise MalformedDataError(
            f"{report.dropped_malformed} of {lines} rows in {path} are malformed "
            f"(threshold {schema.malformed_threshold:.0%})"
        )
    if report.dropped_malformed:
        logger.warning(f"Dropped {report.dropped_malformed} malformed rows from {path}")
    if report.dropped_missing:
        logger.warning(f"Dropped {report.dropped_missing} rows with missing cells from {path}")

    frame = frame.loc[~(malformed | missing), wide_columns(farm_ids, schema)].reset_index(drop=True)
    for column in value_columns:
        frame[column] = frame[column].astype(float)
    stamps = pd.to_datetime(frame[schema.timestamp_column], errors="coerce")
    if len(stamps) > 1 and not stamps.is_monotonic_increasing:
        report.non_monotone_timestamps = True
        logger.warning(f"Timestamps in {path} are not monotone increasing")

    capacities = tuple(float((schema.capacities or {}).get(f, 1.0)) for f in farm_ids)
    table = WideTable(frame=frame, farm_ids=farm_ids, capacities=capacities, schema=schema)
    if schema.normalize:
        table = normalize_capacity(table)
    report.rows_kept = table.n_rows
    return table, report


class WindDataCleaner:
    def __init__(self, processed_dir=None):
        self.processed_dir = processed_dir or get_settings().processed_dir
        os.makedirs(self.processed_dir, exist_ok=True)

    def clean(self, filepath, schema=None):
        """Load, drop incomplete rows, normalize by capacity and save"""
        logger.info(f"Cleaning wind data from {filepath}")
        table, report = load_csv(filepath, schema)
        stem = os.path.splitext(os.path.basename(filepath))[0]
        output_filepath = os.path.join(self.processed_dir, f"{stem}_cleaned.csv")
        table.to_csv(output_filepath)
        logger.info(f"Saved cleaned data ({table.n_rows} rows, {table.n_farms} farms) to {output_filepath}")
        return output_filepath, table, report

    def run(self, filepath, schema=None):
        output_filepath, table, report = self.clean(filepath, schema)
        return {"filepath": output_filepath, "table": table, "report": report.to_dict()}
