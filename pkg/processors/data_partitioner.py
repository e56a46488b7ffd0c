"""Vertical partition of a wide table: farm m keeps only its own power and forecast columns."""
import pandas as pd

from common.errors import DimensionError
from processors.data_cleaner import CsvSchema, WideTable, wide_columns
from protocols.distributed_em import VerticalSlice


def partition_vertical(table):
    """One VerticalSlice per farm, rows aligned by timestamp"""
    power, forecast = table.power, table.forecast
    return [VerticalSlice(node=m, power=power[:, m], forecast=forecast[:, m]) for m in range(table.n_farms)]


def reassemble(slices, timestamps, farm_ids=None, schema=None):
    """Inverse of partition_vertical; only the harness ever holds every slice"""
    schema = schema or CsvSchema()
    farm_ids = tuple(farm_ids or (str(m + 1) for m in range(len(slices))))
    if len(farm_ids) != len(slices):
        raise DimensionError(f"{len(farm_ids)} farm ids for {len(slices)} slices")
    values = [list(timestamps)] + [s.power for s in slices] + [s.forecast for s in slices]
    frame = pd.DataFrame(dict(zip(wide_columns(farm_ids, schema), values)))
    return WideTable(frame=frame, farm_ids=farm_ids, schema=schema)
