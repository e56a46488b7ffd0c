"""EM over vertically partitioned data: each farm holds only its own power and forecast columns.

E-step: the Mahalanobis exponent of every (component, observation) pair is
split into two summations over farms. The first yields tau = Sigma^-1 (x - mu),
the second the exponent itself; responsibilities then follow locally.
M-step: weights are local, means and variances are computed by their owners
and broadcast, and the covariance off-diagonals come from hashed inner
products of the farms' weighted deviation vectors.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from dagster import get_dagster_logger
from scipy.special import logsumexp

from common.errors import AgreementError, ComponentCollapseError, DimensionError, HashBudgetError
from gmm.em import COLLAPSE_MASS, MONOTONE_SLACK, EmConfig, floor_covariance, has_converged, random_responsibilities
from gmm.mixture import LOG_2PI, GmmParams, cholesky_factor
from protocols.transport import ProtocolConfig, make_transport

logger = get_dagster_logger(__name__)

NEGATIVE_EIGENVALUE_LIMIT = -0.1


@dataclass(frozen=True, eq=False)
class VerticalSlice:
    """One farm's private columns, rows aligned by timestamp across farms"""

    node: int
    power: np.ndarray
    forecast: np.ndarray

    def __post_init__(self):
        power = np.asarray(self.power, dtype=float).reshape(-1)
        forecast = np.asarray(self.forecast, dtype=float).reshape(-1)
        if power.shape != forecast.shape:
            raise DimensionError(f"Farm {self.node}: power has {power.size} rows, forecast {forecast.size}")
        object.__setattr__(self, "power", power)
        object.__setattr__(self, "forecast", forecast)

    @property
    def n_rows(self):
        return self.power.shape[0]


@dataclass(frozen=True, eq=False)
class PublicKnowledge:
    """What every farm holds after a phase: parameters, responsibilities and log-likelihood"""

    params: GmmParams
    responsibilities: np.ndarray = None
    log_likelihood: float = None

    @property
    def normalized(self):
        """c_{j,n} = Q_{j,n} / sum_n Q_{j,n}"""
        return self.responsibilities / self.responsibilities.sum(axis=1, keepdims=True)

    def same_as(self, other):
        if not self.params.same_as(other.params):
            return False
        if self.responsibilities is None or other.responsibilities is None:
            return self.responsibilities is other.responsibilities
        return self.responsibilities.tobytes() == other.responsibilities.tobytes() and self.log_likelihood == other.log_likelihood


@dataclass
class DistributedTrace:
    log_likelihoods: list = field(default_factory=list)
    converged: bool = False
    diagnostics: list = field(default_factory=list)
    messages: list = field(default_factory=list)
    bytes: list = field(default_factory=list)
    inner_product_errors: list = field(default_factory=list)
    transport: str = "exact-oracle"

    @property
    def iterations(self):
        return len(self.log_likelihoods)

    @property
    def mean_inner_product_error(self):
        return float(np.mean(self.inner_product_errors)) if self.inner_product_errors else None

    def to_dict(self):
        return {
            "transport": self.transport,
            "iterations": self.iterations,
            "converged": self.converged,
            "log_likelihoods": list(self.log_likelihoods),
            "messages": list(self.messages),
            "bytes": list(self.bytes),
            "inner_product_errors": list(self.inner_product_errors),
            "mean_inner_product_error": self.mean_inner_product_error,
            "diagnostics": list(self.diagnostics),
        }


def _check_slices(slices):
    if not slices:
        raise ValueError("Need at least one farm")
    n_rows = slices[0].n_rows
    for m, data_slice in enumerate(slices):
        if data_slice.node != m:
            raise ValueError(f"Slice at position {m} belongs to farm {data_slice.node}")
        if data_slice.n_rows != n_rows:
            raise DimensionError(f"Farm {m} has {data_slice.n_rows} rows, farm 0 has {n_rows}")
    return len(slices), n_rows


def precision_matrices(params):
    """Sigma_j^-1 and log|Sigma_j| per component, from the Cholesky factor"""
    J, D = params.n_components, params.dim
    precisions = np.empty((J, D, D))
    log_dets = np.empty(J)
    for j in range(J):
        factor = cholesky_factor(params.covariances[j], component=j)
        inverse = scipy.linalg.cho_solve((factor, True), np.eye(D))
        precisions[j] = 0.5 * (inverse + inverse.T)
        log_dets[j] = 2.0 * np.sum(np.log(np.diag(factor)))
    return precisions, log_dets


def _deviations(data_slice, params):
    M = params.n_farms
    m = data_slice.node
    return data_slice.power - params.means[:, m, None], data_slice.forecast - params.means[:, M + m, None]


def local_first_sum_term(data_slice, params, j, n, i, precisions=None):
    """d_{n,i,m}: farm m's share of (Sigma_j^-1 (x_n - mu_j))_i"""
    precisions = precision_matrices(params)[0] if precisions is None else precisions
    M = params.n_farms
    m = data_slice.node
    dev_power, dev_forecast = _deviations(data_slice, params)
    return float(precisions[j, m, i] * dev_power[j, n] + precisions[j, M + m, i] * dev_forecast[j, n])


def local_first_sum_terms(data_slice, params, precisions):
    """All d_{n,i,m} of farm m at once, shape (J, N, 2M)"""
    M = params.n_farms
    m = data_slice.node
    dev_power, dev_forecast = _deviations(data_slice, params)
    return dev_power[:, :, None] * precisions[:, None, m, :] + dev_forecast[:, :, None] * precisions[:, None, M + m, :]


def local_second_sum_terms(data_slice, params, tau):
    """e_{n,m}: farm m's share of the exponent given tau (J, N, 2M), shape (J, N)"""
    M = params.n_farms
    m = data_slice.node
    dev_power, dev_forecast = _deviations(data_slice, params)
    return dev_power * tau[:, :, m] + dev_forecast * tau[:, :, M + m]


def _responsibilities(params, exponents, log_dets):
    with np.errstate(divide="ignore"):
        log_weights = np.log(params.weights)
    log_joint = log_weights[:, None] - 0.5 * (params.dim * LOG_2PI + log_dets[:, None] + exponents)
    log_norm = logsumexp(log_joint, axis=0)
    return np.exp(log_joint - log_norm), float(np.sum(log_norm))


def _require_agreement(items, what):
    first = items[0]
    for r, item in enumerate(items[1:], start=1):
        if not first.same_as(item):
            raise AgreementError(f"Farm {r} disagrees with farm 0 on the {what}")


def distributed_e_step(slices, params, transport):
    """Responsibilities and log-likelihood at every farm; returns one PublicKnowledge per farm"""
    M, _ = _check_slices(slices)
    if params.n_farms != M:
        raise DimensionError(f"Parameters describe {params.n_farms} farms, data has {M}")
    precisions, log_dets = precision_matrices(params)
    first = np.stack([local_first_sum_terms(s, params, precisions) for s in slices])
    tau = transport.sum(first, tag="e-step/tau")
    second = np.stack([local_second_sum_terms(slices[m], params, tau[m]) for m in range(M)])
    exponents = transport.sum(second, tag="e-step/exponent")
    knowledge = []
    for r in range(M):
        resp, log_likelihood = _responsibilities(params, exponents[r], log_dets)
        knowledge.append(PublicKnowledge(params=params, responsibilities=resp, log_likelihood=log_likelihood))
    _require_agreement(knowledge, "responsibilities")
    return knowledge


def _local_moments(data_slice, c):
    """Weighted means and variances of a farm's two columns, each (J, 2)"""
    columns = np.stack([data_slice.power, data_slice.forecast], axis=1)
    means = c @ columns
    variances = np.stack([np.sum(c * (columns[:, k] - means[:, k, None]) ** 2, axis=1) for k in range(2)], axis=1)
    return means, variances


def distributed_m_step(slices, resp, transport, floor=1e-8):
    """New parameters at every farm from identical responsibilities ``resp`` (J, N)"""
    M, N = _check_slices(slices)
    resp = np.asarray(resp, dtype=float)
    J = resp.shape[0]
    mass = resp.sum(axis=1)
    for j, total in enumerate(mass):
        if total < COLLAPSE_MASS:
            raise ComponentCollapseError(j, total)
    weights = mass / N
    c = resp / mass[:, None]

    moments = [_local_moments(s, c) for s in slices]
    own_means = np.stack([mean for mean, _ in moments])  # (M, J, 2)
    own_vars = np.stack([var for _, var in moments])
    means_copies = transport.broadcast(own_means.reshape(M, -1), tag="m-step/means").reshape(M, M, J, 2)
    var_copies = transport.broadcast(own_vars.reshape(M, -1), tag="m-step/variances").reshape(M, M, J, 2)

    root_c = np.sqrt(c)
    grams = np.empty((M, J, 2 * M, 2 * M))
    for j in range(J):
        vectors = np.empty((2 * M, N))
        for m, s in enumerate(slices):
            vectors[m] = root_c[j] * (s.power - own_means[m, j, 0])
            vectors[M + m] = root_c[j] * (s.forecast - own_means[m, j, 1])
        grams[:, j] = transport.gram(vectors, tag=f"m-step/gram/{j}")

    params_per_node = []
    for r in range(M):
        means = np.concatenate([means_copies[r, :, :, 0].T, means_copies[r, :, :, 1].T], axis=1)
        variances = np.concatenate([var_copies[r, :, :, 0].T, var_copies[r, :, :, 1].T], axis=1)
        covariances = np.empty((J, 2 * M, 2 * M))
        for j in range(J):
            cov = grams[r, j].copy()
            cov[np.diag_indices(2 * M)] = variances[j]
            cov = 0.5 * (cov + cov.T)
            smallest = float(np.linalg.eigvalsh(cov)[0])
            if smallest < NEGATIVE_EIGENVALUE_LIMIT:
                raise HashBudgetError(
                    f"Covariance of component {j} has eigenvalue {smallest:.3f} < {NEGATIVE_EIGENVALUE_LIMIT}; "
                    "increase the hash length L"
                )
            covariances[j] = floor_covariance(cov, floor)
        params_per_node.append(GmmParams(weights=weights, means=means, covariances=covariances))
    _require_agreement([PublicKnowledge(params=p) for p in params_per_node], "parameters")
    return params_per_node


def stacked_observations(slices):
    """(N, 2M) rows of every farm; harness and audit use only"""
    return np.column_stack([s.power for s in slices] + [s.forecast for s in slices])


def ppd_em_fit(slices, topology, config=None, protocol=None, init=None, failure_plan=None, transport=None):
    """Distributed EM; returns (parameters held by every farm, trace).

    Without ``init`` the farms start from seeded random responsibilities
    followed by one distributed M-step, which needs no row access.
    """
    config = config or EmConfig(init="random-responsibilities")
    protocol = protocol or ProtocolConfig()
    M, N = _check_slices(slices)
    if topology.n_nodes != M:
        raise DimensionError(f"Topology has {topology.n_nodes} nodes, data has {M} farms")
    if N <= config.n_components:
        raise ValueError(f"Need more observations ({N}) than components ({config.n_components})")
    raw = stacked_observations(slices) if protocol.audit else None
    transport = transport or make_transport(topology, protocol, failure_plan, raw_values=raw)
    trace = DistributedTrace(transport=transport.name)

    if init is not None:
        node_params = [init] * M
    else:
        if config.init != "random-responsibilities":
            logger.info(f"Init {config.init!r} needs full rows; farms start from seeded responsibilities instead")
        node_params = distributed_m_step(
            slices, random_responsibilities(config.n_components, N, config.seed), transport, config.cov_floor
        )

    logger.info(f"Starting distributed EM ({transport.name}): M={M}, N={N}, J={config.n_components}")
    previous = None
    for iteration in range(config.max_iter):
        knowledge = distributed_e_step(slices, node_params[0], transport)
        current = knowledge[0].log_likelihood
        trace.log_likelihoods.append(current)
        trace.messages.append(transport.messages)
        trace.bytes.append(transport.bytes)
        slack = MONOTONE_SLACK
        if transport.inner_product_errors:
            slack = max(slack, 10.0 * transport.inner_product_errors[-1])
        if previous is not None and current < previous - slack * max(1.0, abs(previous)):
            message = f"log-likelihood decreased at iteration {iteration}: {previous:.12g} -> {current:.12g}"
            logger.warning(message)
            trace.diagnostics.append(message)
        if has_converged(previous, current, config.tol):
            trace.converged = True
            break
        previous = current
        node_params = distributed_m_step(slices, knowledge[0].responsibilities, transport, config.cov_floor)
        logger.debug(f"Distributed EM iteration {iteration}: log-likelihood {current:.6f}")
    trace.inner_product_errors = list(transport.inner_product_errors)
    logger.info(
        f"Distributed EM {'converged' if trace.converged else 'stopped'} after {trace.iterations} iterations, "
        f"{transport.messages} messages"
    )
    return node_params, trace
