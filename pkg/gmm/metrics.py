"""Curve comparison, mixture divergence and inner-product error statistics."""
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from common.errors import DimensionError, MetricError
from gmm.mixture import mixture_logpdf, sample

GRID_POINTS = 512
KLD_SAMPLES = 20_000


@dataclass(frozen=True, eq=False)
class CurveGrid:
    x: np.ndarray
    values: np.ndarray
    kind: str  # "pdf" or "cdf"

    def __post_init__(self):
        if self.kind not in ("pdf", "cdf"):
            raise ValueError(f"Unknown curve kind {self.kind!r}")
        if np.shape(self.x) != np.shape(self.values):
            raise DimensionError("Grid and values differ in length")


@dataclass(frozen=True)
class KldEstimate:
    value: float
    stderr: float
    samples: int


def rse(f, f0):
    """Sum of squared deviations from the benchmark, relative to the benchmark's spread"""
    if isinstance(f, CurveGrid) and isinstance(f0, CurveGrid):
        if f.x.shape != f0.x.shape or not np.array_equal(f.x, f0.x):
            raise DimensionError("RSE needs curves on identical grids")
        f, f0 = f.values, f0.values
    f = np.asarray(f, dtype=float)
    f0 = np.asarray(f0, dtype=float)
    if f.shape != f0.shape:
        raise DimensionError(f"Curve shapes differ: {f.shape} vs {f0.shape}")
    denominator = np.sum((f0.mean() - f0) ** 2)
    if denominator == 0:
        raise MetricError("Benchmark curve is constant; RSE is undefined")
    return float(np.sum((f - f0) ** 2) / denominator)


def empirical_cdf(column, grid):
    column = np.sort(np.asarray(column, dtype=float).reshape(-1))
    if column.size == 0:
        raise ValueError("Empirical CDF needs at least one observation")
    grid = np.asarray(grid, dtype=float)
    values = np.searchsorted(column, grid, side="right") / column.size
    return CurveGrid(x=grid, values=values, kind="cdf")


def evaluation_grid(column, points=GRID_POINTS, spread=3.0):
    """Grid over the data range widened by ``spread`` standard deviations"""
    column = np.asarray(column, dtype=float).reshape(-1)
    std = column.std() if column.size > 1 else 1.0
    return np.linspace(column.min() - spread * std, column.max() + spread * std, points)


def marginal_pdf_cdf(params, dim, grid):
    """1-D marginal density and distribution of dimension ``dim`` on ``grid``"""
    grid = np.asarray(grid, dtype=float)
    means = params.means[:, dim]
    stds = np.sqrt(params.covariances[:, dim, dim])
    pdf = np.sum(params.weights * norm.pdf(grid[:, None], loc=means, scale=stds), axis=1)
    cdf = np.sum(params.weights * norm.cdf(grid[:, None], loc=means, scale=stds), axis=1)
    return CurveGrid(x=grid, values=pdf, kind="pdf"), CurveGrid(x=grid, values=cdf, kind="cdf")


def gmm_kld(p, q, samples=KLD_SAMPLES, seed=0):
    """Monte Carlo KL(p || q) with its standard error, clamped at zero"""
    if p.dim != q.dim:
        raise DimensionError(f"Mixtures differ in dimension: {p.dim} vs {q.dim}")
    draws = sample(p, samples, seed)
    log_ratio = mixture_logpdf(draws, p) - mixture_logpdf(draws, q)
    stderr = float(log_ratio.std(ddof=1) / np.sqrt(samples)) if samples > 1 else float("nan")
    return KldEstimate(value=max(float(log_ratio.mean()), 0.0), stderr=stderr, samples=samples)


def inner_product_relative_errors(estimated, exact):
    """Relative errors of the off-diagonal entries of two Gram matrices"""
    estimated = np.asarray(estimated, dtype=float)
    exact = np.asarray(exact, dtype=float)
    if estimated.shape != exact.shape:
        raise DimensionError("Gram matrices differ in shape")
    rows, cols = np.triu_indices(exact.shape[-1], k=1)
    reference = exact[..., rows, cols]
    with np.errstate(divide="ignore", invalid="ignore"):
        errors = np.abs(estimated[..., rows, cols] - reference) / np.abs(reference)
    return errors[np.isfinite(errors)]
