"""Per-farm forecast-error distributions conditioned on a forecast vector.

Given the fitted joint mixture and a public forecast vector y0, the error
z_m = x_m - y0_m of farm m is again a Gaussian mixture whose weights, means
and variances come from block-wise Gaussian conditioning of every component.
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import logsumexp
from scipy.stats import norm

from common.errors import ConditioningError, DimensionError
from gmm.mixture import LOG_2PI


@dataclass(frozen=True, eq=False)
class ConditionalErrorDist:
    """Mixture over the forecast error of one farm.

    ``means`` and ``variances`` describe the conditional power x_m given
    Y = y0 per component; the error density at z is the mixture evaluated at
    z + forecast.
    """

    node: int
    forecast: float
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    @property
    def error_means(self):
        return self.means - self.forecast

    def pdf(self, z):
        z = np.asarray(z, dtype=float)
        power = z[..., None] + self.forecast
        return np.sum(self.weights * norm.pdf(power, loc=self.means, scale=np.sqrt(self.variances)), axis=-1)

    def cdf(self, z):
        z = np.asarray(z, dtype=float)
        power = z[..., None] + self.forecast
        return np.sum(self.weights * norm.cdf(power, loc=self.means, scale=np.sqrt(self.variances)), axis=-1)

    def mean(self):
        return float(np.dot(self.weights, self.error_means))


def forecast_exponent_shares(params, j, y0):
    """Per-farm additive shares of (y0 - mu_y)^T C^-1 (y0 - mu_y) for component j.

    Farm m holds forecast dimension m; its share is r_m * (C^-1 r)_m, so the
    shares decompose the exponent the same way the distributed E-step does and
    may be summed with any summation primitive, ppd_sum included.
    """
    y0 = _check_forecast(params, y0)
    residual = y0 - params.mean_y(j)
    factor = scipy.linalg.cho_factor(params.block_c(j), lower=True)
    return residual * scipy.linalg.cho_solve(factor, residual)


def derive_conditional(params, m, y0, exponent_sums=None):
    """Conditional forecast-error mixture of farm ``m`` given forecasts ``y0``.

    ``exponent_sums`` optionally supplies, per component, the already-summed
    Mahalanobis exponent of N_j(y0; mu_{j,y}, C_j) (for instance the output of
    a distributed summation of ``forecast_exponent_shares``).
    """
    M = params.n_farms
    if not 0 <= m < M:
        raise DimensionError(f"Farm index {m} outside 0..{M - 1}")
    y0 = _check_forecast(params, y0)
    J = params.n_components
    log_alpha = np.empty(J)
    means = np.empty(J)
    variances = np.empty(J)
    with np.errstate(divide="ignore"):
        log_weights = np.log(params.weights)
    for j in range(J):
        try:
            factor = scipy.linalg.cho_factor(params.block_c(j), lower=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise ConditioningError(f"Forecast block C of component {j} is singular: {exc}") from exc
        residual = y0 - params.mean_y(j)
        solved = scipy.linalg.cho_solve(factor, residual)
        exponent = float(residual @ solved) if exponent_sums is None else float(exponent_sums[j])
        log_det = 2.0 * np.sum(np.log(np.diag(factor[0])))
        log_alpha[j] = log_weights[j] - 0.5 * (M * LOG_2PI + log_det + exponent)

        b = params.block_b(j)[m]
        means[j] = params.means[j, m] + b @ solved
        variances[j] = params.covariances[j, m, m] - b @ scipy.linalg.cho_solve(factor, b)
        if variances[j] <= 0:
            raise ConditioningError(
                f"Conditional variance of farm {m} in component {j} is {variances[j]:.3e}, not positive"
            )
    weights = np.exp(log_alpha - logsumexp(log_alpha))
    return ConditionalErrorDist(
        node=m, forecast=float(y0[m]), weights=weights, means=means, variances=variances
    )


def _check_forecast(params, y0):
    y0 = np.asarray(y0, dtype=float).reshape(-1)
    if y0.shape[0] != params.n_farms:
        raise DimensionError(f"Forecast vector has length {y0.shape[0]}, expected {params.n_farms}")
    return y0
