import numpy as np
import pytest

from gmm.mixture import GmmParams, sample
from processors.data_partitioner import partition_vertical
from protocols.topology import Topology
from sources.synthetic_source import make_synthetic


@pytest.fixture(autouse=True)
def data_dir(tmp_path, monkeypatch):
    """Keep every worker's output inside the test's temporary directory"""
    monkeypatch.setenv("WIND_PPD_DATA_DIR", str(tmp_path / "data"))
    return tmp_path / "data"


@pytest.fixture
def two_farm_params():
    """J=2 mixture over (x1, x2, y1, y2)"""
    factor = np.array(
        [
            [0.20, 0.00, 0.00, 0.00],
            [0.10, 0.20, 0.00, 0.00],
            [0.17, 0.05, 0.10, 0.00],
            [0.07, 0.19, 0.02, 0.10],
        ]
    )
    base = factor @ factor.T
    return GmmParams(
        weights=np.array([0.4, 0.6]),
        means=np.array([[0.2, 0.3, 0.25, 0.28], [0.7, 0.6, 0.65, 0.62]]),
        covariances=np.stack([base, 0.5 * base + 0.01 * np.eye(4)]),
    )


@pytest.fixture
def two_farm_data(two_farm_params):
    return sample(two_farm_params, 200, seed=7)


@pytest.fixture
def case_study():
    return Topology.case_study()


@pytest.fixture
def small_table():
    table, _ = make_synthetic(n_farms=3, n_rows=60, seed=3)
    return table


@pytest.fixture
def small_slices(small_table):
    return partition_vertical(small_table)


@pytest.fixture
def triangle():
    return Topology(3, [(0, 1), (1, 2), (0, 2)])
