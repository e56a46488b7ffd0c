import numpy as np
import pytest

from common.errors import DimensionError, MetricError
from gmm.metrics import (
    CurveGrid,
    empirical_cdf,
    evaluation_grid,
    gmm_kld,
    inner_product_relative_errors,
    marginal_pdf_cdf,
    rse,
)
from gmm.mixture import GmmParams


def _normal(mean):
    return GmmParams(weights=[1.0], means=[[mean]], covariances=[[[1.0]]])


class TestRse:
    def test_identical_curves(self):
        f0 = np.linspace(0.0, 1.0, 50) ** 2
        assert rse(f0, f0) == 0.0

    def test_flat_curve_at_the_mean_scores_one(self):
        f0 = np.sin(np.linspace(0.0, 3.0, 64))
        assert rse(np.full_like(f0, f0.mean()), f0) == pytest.approx(1.0)

    def test_constant_benchmark_raises(self):
        with pytest.raises(MetricError):
            rse(np.arange(5.0), np.ones(5))

    def test_curves_on_different_grids_raise(self):
        a = CurveGrid(x=np.linspace(0, 1, 5), values=np.arange(5.0), kind="pdf")
        b = CurveGrid(x=np.linspace(0, 2, 5), values=np.arange(5.0), kind="pdf")
        with pytest.raises(DimensionError):
            rse(a, b)


class TestCurves:
    def test_empirical_cdf_steps(self):
        curve = empirical_cdf([0.2, 0.4, 0.4, 0.9], [0.0, 0.2, 0.4, 0.5, 1.0])
        np.testing.assert_allclose(curve.values, [0.0, 0.25, 0.75, 0.75, 1.0])

    def test_empirical_cdf_needs_data(self):
        with pytest.raises(ValueError):
            empirical_cdf([], [0.0])

    def test_grid_covers_the_data(self):
        column = np.array([0.1, 0.5, 0.9])
        grid = evaluation_grid(column, points=101)
        assert grid.size == 101
        assert grid[0] < 0.1 and grid[-1] > 0.9

    def test_marginal_curves_of_a_normal(self):
        pdf, cdf = marginal_pdf_cdf(_normal(0.0), 0, np.array([0.0]))
        assert pdf.values[0] == pytest.approx(1.0 / np.sqrt(2.0 * np.pi))
        assert cdf.values[0] == pytest.approx(0.5)

    def test_unknown_curve_kind(self):
        with pytest.raises(ValueError):
            CurveGrid(x=np.zeros(2), values=np.zeros(2), kind="hazard")


class TestKld:
    def test_self_divergence_is_zero(self, two_farm_params):
        assert gmm_kld(two_farm_params, two_farm_params, samples=2000).value == 0.0

    def test_shifted_unit_normals(self):
        estimate = gmm_kld(_normal(0.0), _normal(1.0), samples=20000, seed=3)
        assert abs(estimate.value - 0.5) < 3 * estimate.stderr + 1e-3

    def test_dimension_mismatch(self, two_farm_params):
        with pytest.raises(DimensionError):
            gmm_kld(two_farm_params, _normal(0.0), samples=10)


class TestInnerProductErrors:
    def test_exact_estimate_has_zero_error(self):
        gram = np.array([[2.0, 1.0, 0.5], [1.0, 3.0, -1.0], [0.5, -1.0, 1.0]])
        np.testing.assert_array_equal(inner_product_relative_errors(gram, gram), np.zeros(3))

    def test_zero_reference_entries_are_dropped(self):
        exact = np.array([[1.0, 0.0], [0.0, 1.0]])
        estimated = np.array([[1.0, 0.1], [0.1, 1.0]])
        assert inner_product_relative_errors(estimated, exact).size == 0
