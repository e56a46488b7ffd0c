"""Communication graph, Metropolis weights and synchronous average consensus."""
import json
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from common.errors import BroadcastIntegrityError, DimensionError, DisconnectedTopologyError, NonConvergenceError

DEFAULT_TOLERANCE = 1e-10
ROUNDING_GUARD = 1e-3
CHUNK_LIMIT = 2 ** 32


def edge_key(a, b):
    return (a, b) if a < b else (b, a)


class Topology:
    """Undirected connected graph over farms 0..M-1"""

    def __init__(self, n_nodes, edges, coordinates=None, threshold=None):
        if n_nodes < 1:
            raise ValueError("A topology needs at least one node")
        graph = nx.Graph()
        graph.add_nodes_from(range(n_nodes))
        for a, b in edges:
            a, b = int(a), int(b)
            if a == b:
                raise ValueError(f"Self-loop on node {a}")
            if not (0 <= a < n_nodes and 0 <= b < n_nodes):
                raise ValueError(f"Edge ({a}, {b}) references a node outside 0..{n_nodes - 1}")
            graph.add_edge(a, b)
        if not nx.is_connected(graph):
            raise DisconnectedTopologyError(
                f"Topology with {n_nodes} nodes is disconnected: components {[sorted(c) for c in nx.connected_components(graph)]}"
            )
        self.graph = graph
        self.n_nodes = n_nodes
        self.edges = tuple(sorted(edge_key(a, b) for a, b in graph.edges))
        self.coordinates = None if coordinates is None else np.asarray(coordinates, dtype=float)
        self.threshold = threshold

    def __repr__(self):
        return f"Topology(n_nodes={self.n_nodes}, edges={len(self.edges)})"

    def neighbors(self, m):
        return sorted(self.graph.neighbors(m))

    def degree(self, m):
        return self.graph.degree(m)

    @property
    def diameter(self):
        return nx.diameter(self.graph) if self.n_nodes > 1 else 0

    def is_connected_without(self, removed):
        graph = self.graph.copy()
        graph.remove_edges_from(removed)
        return nx.is_connected(graph)

    def without_edges(self, removed):
        removed = {edge_key(*e) for e in removed}
        return Topology(self.n_nodes, [e for e in self.edges if e not in removed], self.coordinates, self.threshold)

    @classmethod
    def from_coordinates(cls, coordinates, threshold):
        """Connect every pair of farms closer than ``threshold``"""
        coordinates = np.asarray(coordinates, dtype=float)
        distances = np.linalg.norm(coordinates[:, None, :] - coordinates[None, :, :], axis=2)
        n = coordinates.shape[0]
        edges = [(a, b) for a in range(n) for b in range(a + 1, n) if distances[a, b] < threshold]
        return cls(n, edges, coordinates=coordinates, threshold=threshold)

    @classmethod
    def case_study(cls):
        """Nine farms, each linked to its one- and two-hop ring neighbours"""
        n = 9
        edges = {edge_key(m, (m + step) % n) for m in range(n) for step in (1, 2)}
        return cls(n, sorted(edges))

    @classmethod
    def ring(cls, n_nodes):
        if n_nodes == 1:
            return cls(1, [])
        return cls(n_nodes, {edge_key(m, (m + 1) % n_nodes) for m in range(n_nodes)})

    @classmethod
    def random_connected(cls, n_nodes, seed, extra_edge_probability=0.2):
        """Random spanning tree plus random extra edges"""
        rng = np.random.default_rng(seed)
        order = rng.permutation(n_nodes)
        edges = {edge_key(int(order[k]), int(order[rng.integers(k)])) for k in range(1, n_nodes)}
        for a in range(n_nodes):
            for b in range(a + 1, n_nodes):
                if rng.random() < extra_edge_probability:
                    edges.add((a, b))
        return cls(n_nodes, sorted(edges))

    def to_dict(self):
        payload = {"n_nodes": self.n_nodes, "edges": [list(e) for e in self.edges]}
        if self.coordinates is not None:
            payload["coordinates"] = self.coordinates.tolist()
            payload["threshold"] = self.threshold
        return payload

    @classmethod
    def from_dict(cls, payload):
        if "edges" in payload:
            return cls(
                payload.get("n_nodes", 1 + max(max(e) for e in payload["edges"])),
                [tuple(e) for e in payload["edges"]],
                payload.get("coordinates"),
                payload.get("threshold"),
            )
        if "coordinates" in payload and "threshold" in payload:
            return cls.from_coordinates(payload["coordinates"], payload["threshold"])
        raise ValueError("Topology file needs either 'edges' or 'coordinates' plus 'threshold'")

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as handle:
            return cls.from_dict(json.load(handle))

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(self.to_dict(), handle, indent=2)
        return path


def metropolis_weights(topology):
    """Symmetric doubly-stochastic weights alpha_{m,i} = 1 / (max(deg m, deg i) + 1) on edges"""
    M = topology.n_nodes
    weights = np.zeros((M, M))
    for a, b in topology.edges:
        weights[a, b] = weights[b, a] = 1.0 / (max(topology.degree(a), topology.degree(b)) + 1)
    for m in range(M):
        weights[m, m] = self_weight(weights, m, topology.neighbors(m))
    return weights


def active_adjacency(weights, active_edges=None):
    """Sorted neighbour lists: nonzero off-diagonal weights restricted to the active edges"""
    M = weights.shape[0]
    active = None if active_edges is None else {edge_key(*e) for e in active_edges}
    return [
        [i for i in range(M) if i != m and weights[m, i] > 0 and (active is None or edge_key(m, i) in active)]
        for m in range(M)
    ]


def self_weight(weights, m, neighbours):
    return 1.0 - sum(weights[m, i] for i in neighbours)


def effective_weights(weights, active_edges=None):
    """Weights with inactive edges folded back into both endpoints' self-weight"""
    neighbours = active_adjacency(weights, active_edges)
    effective = np.zeros_like(weights)
    for m, row in enumerate(neighbours):
        effective[m, row] = weights[m, row]
        effective[m, m] = self_weight(weights, m, row)
    return effective


def local_update(weights, m, own, received):
    """Node m's next value from its own value and ``received`` = [(i, G_i), ...] sorted by i"""
    value = self_weight(weights, m, [i for i, _ in received]) * own
    for i, neighbour_value in received:
        value = value + weights[m, i] * neighbour_value
    return value


def default_max_rounds(weights):
    graph = nx.from_numpy_array((weights > 0) & ~np.eye(weights.shape[0], dtype=bool))
    diameter = nx.diameter(graph) if weights.shape[0] > 1 else 1
    return 10 * weights.shape[0] * max(diameter, 1)


def second_eigenvalue_modulus(weights):
    moduli = np.sort(np.abs(np.linalg.eigvalsh((weights + weights.T) / 2)))
    return float(moduli[-2]) if moduli.size > 1 else 0.0


def broadcast_max_rounds(weights, spread, threshold):
    """Round cap for driving ``spread`` below an absolute ``threshold``, with a 2x margin"""
    limit = default_max_rounds(weights)
    modulus = second_eigenvalue_modulus(weights)
    if spread <= threshold or not 0.0 < modulus < 1.0:
        return limit
    needed = int(np.ceil(np.log(threshold / spread) / np.log(modulus)))
    return max(limit, 2 * needed + weights.shape[0])


@dataclass
class ConsensusState:
    values: np.ndarray
    tick: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        self.values = values.reshape(values.shape[0], -1)

    @property
    def spread(self):
        if self.values.size == 0:
            return 0.0
        return float(np.max(self.values.max(axis=0) - self.values.min(axis=0)))


@dataclass
class ConsensusResult:
    values: np.ndarray
    rounds: int
    spreads: list = field(default_factory=list)
    history: list = field(default_factory=list)


def consensus_round(state, weights, active_edges=None):
    """One synchronous averaging step G^{t+1} = A G^t over the active edges"""
    neighbours = active_adjacency(weights, active_edges)
    values = state.values
    updated = np.stack(
        [local_update(weights, m, values[m], [(i, values[i]) for i in row]) for m, row in enumerate(neighbours)]
    )
    return ConsensusState(updated, state.tick + 1)


def run_consensus(
    initial,
    weights,
    tolerance=DEFAULT_TOLERANCE,
    max_rounds=None,
    network=None,
    kind="CONSENSUS_VALUE",
    phase="consensus",
    keep_history=False,
    rounds=None,
    relative=True,
):
    """Iterate consensus rounds until the spread across nodes falls below tolerance.

    The spread threshold is ``tolerance * max(1, max|initial|)``, or ``tolerance``
    itself when ``relative`` is false. On return every node holds the network
    average of ``initial``. A fixed ``rounds`` budget replaces the stop rule and
    never raises.
    """
    state = ConsensusState(initial)
    if state.values.shape[0] != weights.shape[0]:
        raise DimensionError(f"{state.values.shape[0]} node values for a {weights.shape[0]}-node weight matrix")
    if tolerance <= 0:
        raise ValueError("Consensus tolerance must be positive")
    scale = float(np.max(np.abs(state.values))) if state.values.size else 0.0
    threshold = tolerance * max(1.0, scale) if relative else tolerance
    limit = default_max_rounds(weights) if max_rounds is None else max_rounds
    spreads = [state.spread]
    history = [state.values.copy()] if keep_history else []

    def keep_going():
        if rounds is not None:
            return state.tick < rounds
        return spreads[-1] >= threshold

    while keep_going():
        if rounds is None and state.tick >= limit:
            raise NonConvergenceError(
                f"Consensus did not converge in {limit} rounds (spread {spreads[-1]:.3e}, threshold {threshold:.3e})",
                residual=spreads[-1],
                rounds=state.tick,
            )
        active = network.active_edges() if network is not None else None
        if network is not None:
            network.record_exchange(state.values, active, kind=kind, phase=phase)
        state = consensus_round(state, weights, active)
        spreads.append(state.spread)
        if keep_history:
            history.append(state.values.copy())
    return ConsensusResult(values=state.values, rounds=state.tick, spreads=spreads, history=history)


def min_agreement(values, weights, network=None, rounds=None, phase="agreement"):
    """Min-consensus over the active graph; after M - 1 rounds every node holds the same bits"""
    values = np.array(values, dtype=float)
    M = values.shape[0]
    rounds = M - 1 if rounds is None else rounds
    for _ in range(rounds):
        active = network.active_edges() if network is not None else None
        if network is not None:
            network.record_exchange(values, active, kind="CONSENSUS_VALUE", phase=phase)
        neighbours = active_adjacency(weights, active)
        values = np.stack([np.min(values[[m] + neighbours[m]], axis=0) for m in range(M)])
    return values


def consensus_broadcast(payloads, weights, tolerance=DEFAULT_TOLERANCE, integer=False, network=None, kind="CONSENSUS_VALUE", phase="broadcast"):
    """Disseminate node-owned entries so every node recovers the whole vector.

    ``payloads`` is (M, K): row m carries node m's entries at its own indices and
    zeros elsewhere. Consensus averages the rows, each node multiplies by M and
    integer-typed components are rounded after an integrity check.
    """
    payloads = np.asarray(payloads, dtype=float)
    M = weights.shape[0]
    payloads = payloads.reshape(M, -1)
    integer_mask = np.broadcast_to(np.asarray(integer, dtype=bool), payloads.shape[1:])
    if np.any(integer_mask) and np.any(np.abs(payloads[:, integer_mask]) >= CHUNK_LIMIT):
        raise BroadcastIntegrityError(f"Integer payload chunks must stay below 2^32")
    if np.any(integer_mask):
        # every node lands within the spread of the average, and the average is scaled by M
        threshold = ROUNDING_GUARD / (10 * M)
        result = run_consensus(
            payloads,
            weights,
            tolerance=threshold,
            max_rounds=broadcast_max_rounds(weights, ConsensusState(payloads).spread, threshold),
            network=network,
            kind=kind,
            phase=phase,
            relative=False,
        )
    else:
        result = run_consensus(payloads, weights, tolerance=tolerance, network=network, kind=kind, phase=phase)
    recovered = result.values * M
    if np.any(integer_mask):
        rounded = np.rint(recovered[:, integer_mask])
        residual = float(np.max(np.abs(recovered[:, integer_mask] - rounded))) if rounded.size else 0.0
        if residual > ROUNDING_GUARD:
            raise BroadcastIntegrityError(f"Broadcast residual {residual:.3e} exceeds rounding guard {ROUNDING_GUARD}")
        recovered[:, integer_mask] = rounded
    return recovered


def float_words(values):
    """IEEE-754 doubles -> (..., 2) 32-bit integer chunks"""
    bits = np.ascontiguousarray(values, dtype=np.float64).view(np.uint64)
    return np.stack([bits >> np.uint64(32), bits & np.uint64(0xFFFFFFFF)], axis=-1).astype(np.float64)


def words_float(words):
    words = np.asarray(words).astype(np.uint64)
    bits = (words[..., 0] << np.uint64(32)) | words[..., 1]
    return bits.view(np.float64)


def broadcast_exact(owned, weights, tolerance=DEFAULT_TOLERANCE, network=None, kind="CONSENSUS_VALUE", phase="broadcast"):
    """Broadcast real values bit-exactly as 32-bit chunks of their IEEE-754 patterns.

    ``owned`` is (M, k): node m's k values. Returns (M, M, k): node r's copy of
    every node's values.
    """
    owned = np.asarray(owned, dtype=float)
    M = owned.shape[0]
    owned = owned.reshape(M, -1)
    k = owned.shape[1]
    words = float_words(owned)  # (M, k, 2)
    payloads = np.zeros((M, M, k, 2))
    for m in range(M):
        payloads[m, m] = words[m]
    recovered = consensus_broadcast(
        payloads.reshape(M, -1), weights, tolerance=tolerance, integer=True, network=network, kind=kind, phase=phase
    )
    return words_float(recovered.reshape(M, M, k, 2))
