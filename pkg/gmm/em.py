"""Centralized EM on the stacked dataset; the benchmark for every distributed run."""
from dataclasses import dataclass, field, replace

import numpy as np
from dagster import get_dagster_logger
from scipy.special import logsumexp

from common.errors import ComponentCollapseError, DimensionError
from gmm.mixture import GmmParams, bic, component_log_densities

logger = get_dagster_logger(__name__)

INIT_STRATEGIES = ("kmeans++", "random-responsibilities")
MONOTONE_SLACK = 1e-8
COLLAPSE_MASS = 1e-12


@dataclass(frozen=True)
class EmConfig:
    n_components: int = 3
    max_iter: int = 500
    tol: float = 1e-6
    cov_floor: float = 1e-8
    seed: int = 0
    init: str = "kmeans++"

    def __post_init__(self):
        if self.n_components < 1:
            raise ValueError("n_components must be positive")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.cov_floor < 0:
            raise ValueError("cov_floor must be nonnegative")
        if self.init not in INIT_STRATEGIES:
            raise ValueError(f"Unknown init strategy {self.init!r}; expected one of {INIT_STRATEGIES}")


@dataclass
class FitTrace:
    log_likelihoods: list = field(default_factory=list)
    converged: bool = False
    diagnostics: list = field(default_factory=list)

    @property
    def iterations(self):
        return len(self.log_likelihoods)


def floor_covariance(cov, floor):
    """Symmetrize, then lift eigenvalues below ``floor`` up to it"""
    cov = 0.5 * (cov + cov.T)
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    if eigenvalues[0] >= floor:
        return cov
    lifted = (eigenvectors * np.maximum(eigenvalues, floor)) @ eigenvectors.T
    return 0.5 * (lifted + lifted.T)


def _check_data(data):
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise DimensionError(f"Expected an (N, D) data matrix, got shape {data.shape}")
    if np.any(np.isnan(data)):
        raise ValueError("Data contains NaN")
    return data


def e_step(data, params, return_log_likelihood=False):
    """Responsibilities Q (J, N), normalized per observation in log-space"""
    data = _check_data(data)
    log_joint = component_log_densities(data, params)
    log_norm = logsumexp(log_joint, axis=0)
    resp = np.exp(log_joint - log_norm)
    if return_log_likelihood:
        return resp, float(np.sum(log_norm))
    return resp


def log_likelihood(data, params):
    return float(np.sum(logsumexp(component_log_densities(_check_data(data), params), axis=0)))


def m_step(data, resp, floor=1e-8):
    data = _check_data(data)
    resp = np.asarray(resp, dtype=float)
    mass = resp.sum(axis=1)
    for j, total in enumerate(mass):
        if total < COLLAPSE_MASS:
            raise ComponentCollapseError(j, total)
    weights = mass / data.shape[0]
    means = (resp @ data) / mass[:, None]
    covariances = np.empty((resp.shape[0], data.shape[1], data.shape[1]))
    for j in range(resp.shape[0]):
        centered = data - means[j]
        cov = (resp[j][:, None] * centered).T @ centered / mass[j]
        covariances[j] = floor_covariance(cov, floor)
    return GmmParams(weights=weights, means=means, covariances=covariances)


def kmeans_plus_plus_means(data, n_components, rng):
    centers = [data[rng.integers(data.shape[0])]]
    for _ in range(1, n_components):
        distances = np.min(((data[:, None, :] - np.array(centers)[None]) ** 2).sum(axis=2), axis=1)
        total = distances.sum()
        if total <= 0:
            centers.append(data[rng.integers(data.shape[0])])
            continue
        centers.append(data[rng.choice(data.shape[0], p=distances / total)])
    return np.array(centers)


def random_responsibilities(n_components, n_rows, seed):
    """Seeded soft assignment used when no party may look at whole rows"""
    rng = np.random.default_rng(seed)
    resp = rng.dirichlet(np.ones(n_components), size=n_rows).T
    return resp


def initialize(data, config):
    """Initial parameters: k-means++ means, uniform weights, pooled covariance"""
    data = _check_data(data)
    if config.init == "random-responsibilities":
        return m_step(data, random_responsibilities(config.n_components, data.shape[0], config.seed), config.cov_floor)
    rng = np.random.default_rng(config.seed)
    means = kmeans_plus_plus_means(data, config.n_components, rng)
    pooled = floor_covariance(np.atleast_2d(np.cov(data.T, bias=True)), config.cov_floor)
    J = config.n_components
    return GmmParams(
        weights=np.full(J, 1.0 / J),
        means=means,
        covariances=np.repeat(pooled[None], J, axis=0),
    )


def has_converged(previous, current, tol):
    if previous is None:
        return False
    return abs(current - previous) < tol * max(abs(previous), 1e-300)


def fit(data, config, init=None):
    """Alternate E- and M-steps until the relative log-likelihood change drops below tol"""
    data = _check_data(data)
    if data.shape[0] <= config.n_components:
        raise ValueError(f"Need more observations ({data.shape[0]}) than components ({config.n_components})")
    params = init if init is not None else initialize(data, config)
    trace = FitTrace()
    previous = None
    logger.info(f"Starting centralized EM: N={data.shape[0]}, D={data.shape[1]}, J={config.n_components}")
    for iteration in range(config.max_iter):
        resp, current = e_step(data, params, return_log_likelihood=True)
        trace.log_likelihoods.append(current)
        if previous is not None and current < previous - MONOTONE_SLACK * max(1.0, abs(previous)):
            message = f"log-likelihood decreased at iteration {iteration}: {previous:.12g} -> {current:.12g}"
            logger.warning(message)
            trace.diagnostics.append(message)
        if has_converged(previous, current, config.tol):
            trace.converged = True
            break
        previous = current
        params = m_step(data, resp, config.cov_floor)
        logger.debug(f"EM iteration {iteration}: log-likelihood {current:.6f}")
    logger.info(
        f"Centralized EM {'converged' if trace.converged else 'stopped'} after {trace.iterations} iterations"
    )
    return params, trace


def select_components(data, candidates, config):
    """Fit every candidate J and score it with BIC; returns rows of (J, bic, log-likelihood, converged)"""
    rows = []
    for n_components in candidates:
        candidate_config = replace(config, n_components=n_components)
        params, trace = fit(data, candidate_config)
        rows.append(
            {
                "n_components": n_components,
                "bic": bic(params, data),
                "log_likelihood": trace.log_likelihoods[-1],
                "converged": trace.converged,
            }
        )
    return rows
