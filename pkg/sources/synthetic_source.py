import json
import os

import numpy as np
import pandas as pd
from dagster import get_dagster_logger

from common.errors import DimensionError
from common.settings import get_settings
from gmm.mixture import GmmParams, sample
from processors.data_cleaner import WideTable, wide_columns

logger = get_dagster_logger(__name__)

PRESETS = ("wind-like",)
POWER_SPREAD = 0.08
ERROR_SPREAD = 0.04
CORRELATION_LENGTH = 0.5
START = "2012-01-01 00:00:00"
PROVENANCE = "synthetic stand-in for hourly wind power and day-ahead forecasts, normalized by capacity"


def spatial_correlation(coordinates, length=CORRELATION_LENGTH):
    """exp(-distance / length) between farm sites"""
    coordinates = np.asarray(coordinates, dtype=float)
    distances = np.linalg.norm(coordinates[:, None, :] - coordinates[None, :, :], axis=2)
    return np.exp(-distances / length)


def wind_like_preset(n_farms, n_components=3, seed=0):
    """Mixture over (power, forecast) with forecast = power + spatially correlated error.

    Component means sweep low to high output; within a component power
    covariance is s^2 R and the forecast error covariance e^2 R, with R
    decaying with the distance between random farm sites.
    """
    if n_farms < 1 or n_components < 1:
        raise ValueError("Need at least one farm and one component")
    rng = np.random.default_rng(seed)
    correlation = spatial_correlation(rng.uniform(0.0, 1.0, size=(n_farms, 2)))
    levels = np.linspace(0.2, 0.75, n_components)
    weights = rng.dirichlet(np.full(n_components, 8.0))
    means = np.empty((n_components, 2 * n_farms))
    covariances = np.empty((n_components, 2 * n_farms, 2 * n_farms))
    for j in range(n_components):
        power_mean = np.clip(levels[j] + rng.normal(0.0, 0.03, n_farms), 0.05, 0.95)
        means[j] = np.concatenate([power_mean, power_mean + rng.normal(0.0, 0.01, n_farms)])
        spread = POWER_SPREAD * rng.uniform(0.8, 1.2)
        power_cov = spread ** 2 * correlation
        error_cov = ERROR_SPREAD ** 2 * correlation
        covariances[j] = np.block([[power_cov, power_cov], [power_cov, power_cov + error_cov]])
    return GmmParams(weights=weights, means=means, covariances=covariances)


def hourly_timestamps(n_rows, start=START):
    return list(pd.date_range(start, periods=n_rows, freq="h").strftime("%Y-%m-%d %H:%M:%S"))


def make_synthetic(n_farms, n_rows, truth="wind-like", seed=0, n_components=3):
    """Sample a wide table from ``truth`` (GmmParams or a preset name); returns (table, truth)"""
    if isinstance(truth, str):
        if truth not in PRESETS:
            raise ValueError(f"Unknown preset {truth!r}; expected one of {PRESETS}")
        truth = wind_like_preset(n_farms, n_components, seed)
    if truth.dim != 2 * n_farms:
        raise DimensionError(f"Truth has dimension {truth.dim}, expected {2 * n_farms}")
    observations = np.clip(sample(truth, n_rows, seed + 1), 0.0, 1.0)
    farm_ids = tuple(str(m + 1) for m in range(n_farms))
    frame = pd.DataFrame(observations, columns=wide_columns(farm_ids)[1:])
    frame.insert(0, "timestamp", hourly_timestamps(n_rows))
    return WideTable(frame=frame, farm_ids=farm_ids), truth


def dataset_manifest(table, seed, preset, truth=None):
    manifest = {
        "n_farms": table.n_farms,
        "n_rows": table.n_rows,
        "farm_ids": list(table.farm_ids),
        "capacities": list(table.capacities),
        "seed": seed,
        "preset": preset,
        "provenance": PROVENANCE,
    }
    if truth is not None:
        manifest["truth"] = truth.to_dict()
    return manifest


def read_manifest(path):
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


class SyntheticWindSource:
    def __init__(self, output_dir=None):
        self.output_dir = output_dir or get_settings().raw_dir
        os.makedirs(self.output_dir, exist_ok=True)

    def generate(self, n_farms, n_rows, preset="wind-like", seed=0, n_components=3):
        logger.info(f"Generating {preset} data: {n_farms} farms, {n_rows} hours, seed {seed}")
        return make_synthetic(n_farms, n_rows, preset, seed, n_components)

    def save(self, table, manifest, name="wind"):
        filepath = os.path.join(self.output_dir, f"{name}.csv")
        table.to_csv(filepath)
        manifest_path = os.path.join(self.output_dir, f"{name}_manifest.json")
        with open(manifest_path, "w", encoding="utf-8") as handle:
            json.dump(manifest, handle, indent=2, sort_keys=True)
        logger.info(f"Saved {table.n_rows} rows to {filepath}")
        return filepath, manifest_path

    def run(self, n_farms=9, n_rows=480, preset="wind-like", seed=0, n_components=3, name="wind"):
        """Generate, save and return file paths plus the table and the true mixture"""
        table, truth = self.generate(n_farms, n_rows, preset, seed, n_components)
        filepath, manifest_path = self.save(table, dataset_manifest(table, seed, preset, truth), name)
        return {"filepath": filepath, "manifest": manifest_path, "table": table, "truth": truth}
