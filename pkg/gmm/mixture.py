"""Gaussian mixture parameters and densities over stacked power/forecast vectors."""
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import logsumexp

from common.errors import CovarianceError, DimensionError

LOG_2PI = np.log(2.0 * np.pi)


def _readonly(array):
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class GmmParams:
    """Weights, means and covariances of a J-component mixture.

    For wind data the dimension is 2M: entries 0..M-1 are the farms' power,
    entries M..2M-1 their forecasts, so each covariance splits into the blocks
    A (power/power), B (power/forecast) and C (forecast/forecast).
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", _readonly(self.weights).reshape(-1))
        means = _readonly(self.means)
        if means.ndim == 1:
            means = _readonly(means.reshape(len(self.weights), -1))
        object.__setattr__(self, "means", means)
        covariances = _readonly(self.covariances)
        if covariances.ndim == 2:
            covariances = _readonly(covariances.reshape(1, *covariances.shape))
        object.__setattr__(self, "covariances", covariances)
        J, D = self.means.shape
        if self.weights.shape != (J,) or self.covariances.shape != (J, D, D):
            raise DimensionError(
                f"Inconsistent shapes: weights {self.weights.shape}, means {self.means.shape}, "
                f"covariances {self.covariances.shape}"
            )

    @property
    def n_components(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def n_farms(self):
        if self.dim % 2:
            raise DimensionError(f"Dimension {self.dim} is not 2M; block accessors need an even dimension")
        return self.dim // 2

    def mean_x(self, j):
        return self.means[j, : self.n_farms]

    def mean_y(self, j):
        return self.means[j, self.n_farms :]

    def block_a(self, j):
        M = self.n_farms
        return self.covariances[j, :M, :M]

    def block_b(self, j):
        M = self.n_farms
        return self.covariances[j, :M, M:]

    def block_c(self, j):
        M = self.n_farms
        return self.covariances[j, M:, M:]

    def validate(self, weight_tol=1e-12, symmetry_tol=1e-10):
        """Check the mixture invariants; raises on the first violation"""
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > weight_tol:
            raise ValueError(f"Weights must be nonnegative and sum to 1, got {self.weights}")
        for j, cov in enumerate(self.covariances):
            if np.max(np.abs(cov - cov.T)) > symmetry_tol:
                raise CovarianceError(f"Covariance of component {j} is not symmetric", component=j)
            cholesky_factor(cov, component=j)
        return self

    def marginal(self, indices):
        """Mixture over a subset of dimensions (linear invariance of GMMs)"""
        idx = np.atleast_1d(np.asarray(indices, dtype=int))
        return GmmParams(
            weights=self.weights,
            means=self.means[:, idx],
            covariances=self.covariances[:, idx[:, None], idx[None, :]],
        )

    def to_dict(self):
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }

    @classmethod
    def from_dict(cls, payload):
        return cls(
            weights=np.asarray(payload["weights"], dtype=float),
            means=np.asarray(payload["means"], dtype=float),
            covariances=np.asarray(payload["covariances"], dtype=float),
        )

    def same_as(self, other):
        """Byte-level equality of all parameter arrays"""
        return (
            self.weights.tobytes() == other.weights.tobytes()
            and self.means.tobytes() == other.means.tobytes()
            and self.covariances.tobytes() == other.covariances.tobytes()
        )


def cholesky_factor(cov, component=None):
    """Lower Cholesky factor, raising CovarianceError on failure"""
    try:
        return scipy.linalg.cholesky(np.asarray(cov, dtype=float), lower=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        label = "" if component is None else f" of component {component}"
        raise CovarianceError(f"Covariance{label} is not positive definite: {exc}", component=component) from exc


def gaussian_logpdf(x, mean, cov, component=None):
    """log N(x | mean, cov) via a triangular factorization.

    ``x`` may be a single vector (D,) or a batch (N, D).
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape != (mean.shape[0], mean.shape[0]):
        raise DimensionError(f"Shape mismatch: mean {mean.shape}, cov {cov.shape}")
    if np.any(np.isnan(x)):
        raise ValueError("Observations contain NaN")
    batch, single = as_observations(x, mean.shape[0])
    factor = cholesky_factor(cov, component=component)
    solved = scipy.linalg.solve_triangular(factor, (batch - mean).T, lower=True)
    mahalanobis = np.sum(solved ** 2, axis=0)
    log_det = 2.0 * np.sum(np.log(np.diag(factor)))
    result = -0.5 * (mean.shape[0] * LOG_2PI + log_det + mahalanobis)
    return result[0] if single else result


def as_observations(x, dim):
    """Coerce ``x`` to an (N, dim) batch; second value tells if it was one point"""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or (x.ndim == 1 and x.size == dim):
        return x.reshape(1, dim), True
    if x.ndim == 1 and dim == 1:
        return x.reshape(-1, 1), False
    if x.ndim != 2 or x.shape[1] != dim:
        raise DimensionError(f"Observations of shape {x.shape} do not match dimension {dim}")
    return x, False


def component_log_densities(x, params):
    """(J, N) matrix of log w_j + log N(x_n | mu_j, Sigma_j)"""
    batch, _ = as_observations(x, params.dim)
    with np.errstate(divide="ignore"):
        log_weights = np.log(params.weights)
    return np.stack(
        [
            log_weights[j] + gaussian_logpdf(batch, params.means[j], params.covariances[j], component=j)
            for j in range(params.n_components)
        ]
    )


def mixture_logpdf(x, params):
    _, single = as_observations(x, params.dim)
    values = logsumexp(component_log_densities(x, params), axis=0)
    return values[0] if single else values


def mixture_pdf(x, params):
    """Mixture density, evaluated in log-space with a max shift"""
    return np.exp(mixture_logpdf(x, params))


def sample(params, n, seed):
    """Draw ``n`` observations; deterministic given ``seed``"""
    rng = np.random.default_rng(seed)
    out = np.empty((n, params.dim))
    if n == 0:
        return out
    labels = rng.choice(params.n_components, size=n, p=params.weights)
    for j in range(params.n_components):
        rows = np.flatnonzero(labels == j)
        if rows.size == 0:
            continue
        factor = cholesky_factor(params.covariances[j], component=j)
        noise = rng.standard_normal((rows.size, params.dim))
        out[rows] = params.means[j] + noise @ factor.T
    return out


def n_free_parameters(n_components, dim):
    return n_components - 1 + n_components * dim + n_components * dim * (dim + 1) // 2


def bic(params, data):
    """-2 log L + k log N"""
    data, _ = as_observations(data, params.dim)
    log_likelihood = float(np.sum(mixture_logpdf(data, params)))
    k = n_free_parameters(params.n_components, params.dim)
    return -2.0 * log_likelihood + k * np.log(data.shape[0])
