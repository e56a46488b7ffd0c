"""How the distributed EM exchanges its global quantities.

``ExactTransport`` replaces every protocol by its exact result (plain sums,
direct copies and exact Gram matrices). ``ProtocolTransport`` runs the real
protocols over a simulated network with message accounting.
"""
from dataclasses import asdict, dataclass

import numpy as np
from dagster import get_dagster_logger

from common.errors import NonConvergenceError, ProtocolError, WindPpdError
from gmm.metrics import inner_product_relative_errors
from protocols.inner_product import HashConfig, ProjectionSet, ppd_inner_products
from protocols.paillier import DEFAULT_KEY_BITS
from protocols.secure_sum import Keyring, SumConfig, ppd_sum
from protocols.topology import DEFAULT_TOLERANCE, broadcast_exact, metropolis_weights
from simnet.network import Network

logger = get_dagster_logger(__name__)

MODES = ("exact-oracle", "full-protocol")


@dataclass(frozen=True)
class ProtocolConfig:
    mode: str = "exact-oracle"
    n_bits: int = 2 ** 11
    encrypt_first_round: bool = True
    key_bits: int = DEFAULT_KEY_BITS
    reuse_keys: bool = True
    tolerance: float = DEFAULT_TOLERANCE
    max_rounds: int = None
    # per-farm secrets for Paillier keys, nonces and masks; None draws fresh entropy
    private_seeds: tuple = None
    hash_seed: int = 0
    audit: bool = False
    keep_messages: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"Unknown protocol mode {self.mode!r}; expected one of {MODES}")

    def to_dict(self):
        """Public settings only; the farms' private seeds never leave the config"""
        return {k: v for k, v in asdict(self).items() if k != "private_seeds"}


def _copies(total, n_nodes):
    return np.broadcast_to(total, (n_nodes,) + total.shape).copy()


class ExactTransport:
    name = "exact-oracle"

    def __init__(self, n_nodes):
        self.n_nodes = n_nodes
        self.network = None
        self.inner_product_errors = []

    def sum(self, summands, tag=None):
        """Every node receives sum_m summands[m], summed in node order"""
        summands = np.asarray(summands, dtype=float)
        return _copies(np.sum(summands, axis=0), self.n_nodes)

    def broadcast(self, owned, tag=None):
        """(M, k) node-owned values -> (M, M, k) copies"""
        owned = np.asarray(owned, dtype=float).reshape(self.n_nodes, -1)
        return _copies(owned, self.n_nodes)

    def gram(self, vectors, tag=None):
        vectors = np.asarray(vectors, dtype=float)
        return _copies(vectors @ vectors.T, self.n_nodes)

    @property
    def messages(self):
        return 0

    @property
    def bytes(self):
        return 0


class ProtocolTransport:
    name = "full-protocol"

    def __init__(self, topology, config=None, failure_plan=None, network=None):
        self.topology = topology
        self.config = config or ProtocolConfig(mode="full-protocol")
        self.n_nodes = topology.n_nodes
        self.weights = metropolis_weights(topology)
        self.network = network or Network(topology, failure_plan, keep_messages=self.config.keep_messages)
        self.sum_config = SumConfig(
            encrypt=self.config.encrypt_first_round,
            key_bits=self.config.key_bits,
            tolerance=self.config.tolerance,
            max_rounds=self.config.max_rounds,
            reuse_keys=self.config.reuse_keys,
            private_seeds=self.config.private_seeds,
        )
        self.hash_config = HashConfig(n_bits=self.config.n_bits, seed=self.config.hash_seed, tolerance=self.config.tolerance)
        self.keyring = Keyring(self.config.key_bits, self.config.private_seeds, self.config.reuse_keys) if self.config.encrypt_first_round else None
        self.invocations = 0
        self.inner_product_errors = []
        self._projections = {}

    def _guard(self, tag, call):
        try:
            return call()
        except NonConvergenceError:
            raise
        except WindPpdError as exc:
            raise ProtocolError(str(exc), tag=tag) from exc

    def sum(self, summands, tag=None):
        self.invocations += 1
        result = self._guard(
            tag,
            lambda: ppd_sum(
                summands,
                self.topology,
                weights=self.weights,
                config=self.sum_config,
                network=self.network,
                keyring=self.keyring,
                invocation=self.invocations,
                phase=f"sum/{tag}" if tag else "sum",
            ),
        )
        logger.debug(f"Summation {tag} finished after {result.rounds} rounds")
        return result.values

    def broadcast(self, owned, tag=None):
        owned = np.asarray(owned, dtype=float).reshape(self.n_nodes, -1)
        return self._guard(
            tag,
            lambda: broadcast_exact(
                owned, self.weights, tolerance=self.config.tolerance, network=self.network, phase=f"broadcast/{tag}" if tag else "broadcast"
            ),
        )

    def gram(self, vectors, tag=None):
        vectors = np.asarray(vectors, dtype=float)
        n_rows = vectors.shape[1]
        if n_rows not in self._projections:
            self._projections[n_rows] = ProjectionSet(self.hash_config.seed, n_rows, self.hash_config.n_bits)
        estimates = self._guard(
            tag,
            lambda: ppd_inner_products(
                vectors,
                self.topology,
                config=self.hash_config,
                weights=self.weights,
                network=self.network,
                projections=self._projections[n_rows],
            ),
        )
        # diagnostic only, never sent
        errors = inner_product_relative_errors(estimates[0].matrix, vectors @ vectors.T)
        self.inner_product_errors.append(float(errors.mean()) if errors.size else 0.0)
        return np.stack([estimate.matrix for estimate in estimates])

    @property
    def messages(self):
        return self.network.accounting.messages

    @property
    def bytes(self):
        return self.network.accounting.bytes


def make_transport(topology, config, failure_plan=None, raw_values=None):
    if config.mode == "exact-oracle":
        return ExactTransport(topology.n_nodes)
    transport = ProtocolTransport(topology, config, failure_plan)
    if config.audit and raw_values is not None:
        transport.network.register_raw(raw_values)
    return transport
