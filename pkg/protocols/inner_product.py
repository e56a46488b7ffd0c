"""Inner products between private vectors from sign random projections.

Each node hashes its vectors against shared Gaussian directions, disseminates
the hash words and the vector norms by consensus broadcast, and then every
node estimates all pairwise angles from Hamming distances.
"""
from dataclasses import dataclass, field

import numpy as np

from common.errors import DimensionError
from protocols.topology import DEFAULT_TOLERANCE, broadcast_exact, consensus_broadcast, metropolis_weights

DEFAULT_HASH_BITS = 2 ** 11
WORD_BITS = 32


@dataclass(frozen=True)
class HashConfig:
    n_bits: int = DEFAULT_HASH_BITS
    seed: int = 0
    tolerance: float = DEFAULT_TOLERANCE

    def __post_init__(self):
        if self.n_bits < 1:
            raise ValueError("Hash length must be positive")


class ProjectionSet:
    """N x L standard-normal directions; column l depends only on (seed, l)"""

    def __init__(self, seed, n_rows, n_bits):
        self.seed = int(seed)
        self.n_rows = n_rows
        self.n_bits = n_bits
        self._matrix = None

    def column(self, l):
        bit_generator = np.random.Philox(key=np.array([self.seed, l], dtype=np.uint64))
        return np.random.Generator(bit_generator).standard_normal(self.n_rows)

    @property
    def matrix(self):
        if self._matrix is None:
            self._matrix = np.column_stack([self.column(l) for l in range(self.n_bits)]) if self.n_bits else np.empty((self.n_rows, 0))
        return self._matrix


@dataclass(frozen=True, eq=False)
class SignHash:
    bits: np.ndarray
    owner: int = None

    @property
    def n_bits(self):
        return self.bits.shape[0]

    @property
    def words(self):
        """ceil(L / 32) unsigned 32-bit words, most significant bit first"""
        n_words = -(-self.n_bits // WORD_BITS)
        padded = np.zeros(n_words * WORD_BITS, dtype=np.uint8)
        padded[: self.n_bits] = self.bits
        return np.packbits(padded).view(">u4").astype(np.uint32)

    @classmethod
    def from_words(cls, words, n_bits, owner=None):
        words = np.asarray(words).astype(">u4")
        return cls(bits=np.unpackbits(words.view(np.uint8))[:n_bits].copy(), owner=owner)


@dataclass(frozen=True, eq=False)
class GramEstimate:
    matrix: np.ndarray
    norms: np.ndarray
    hashes: list = field(default_factory=list, repr=False)

    def same_as(self, other):
        return self.matrix.tobytes() == other.matrix.tobytes()


def sign_hash(vector, projections, owner=None):
    """Bit l is 1 where the vector's projection on direction l is >= 0"""
    vector = np.asarray(vector, dtype=float).reshape(-1)
    if vector.size == 0:
        raise ValueError("Cannot hash a zero-length vector")
    if vector.size != projections.n_rows:
        raise DimensionError(f"Vector length {vector.size} does not match projection rows {projections.n_rows}")
    return SignHash(bits=(vector @ projections.matrix >= 0).astype(np.uint8), owner=owner)


def angle_from_hashes(first, second):
    """pi * Hamming(first, second) / L"""
    if first.n_bits != second.n_bits:
        raise DimensionError(f"Hash lengths differ: {first.n_bits} vs {second.n_bits}")
    return float(np.pi * np.count_nonzero(first.bits != second.bits) / first.n_bits)


def inner_product_from(angle, norm_first, norm_second):
    if norm_first < 0 or norm_second < 0:
        raise ValueError("Norms must be nonnegative")
    return float(norm_first * norm_second * np.cos(angle))


def gram_from(hashes, norms):
    """Symmetric Gram estimate; the diagonal holds the exact squared norms"""
    norms = np.asarray(norms, dtype=float)
    size = len(hashes)
    matrix = np.empty((size, size))
    for a in range(size):
        matrix[a, a] = norms[a] * norms[a]
        for b in range(a + 1, size):
            matrix[a, b] = matrix[b, a] = inner_product_from(angle_from_hashes(hashes[a], hashes[b]), norms[a], norms[b])
    return GramEstimate(matrix=matrix, norms=norms, hashes=list(hashes))


def vector_owners(n_nodes):
    """Vector m (power) and vector M + m (forecast) belong to node m"""
    return [m % n_nodes for m in range(2 * n_nodes)]


def ppd_inner_products(vectors, topology, config=None, weights=None, network=None, projections=None):
    """Every node's estimate of the 2M x 2M Gram matrix of the nodes' private vectors.

    ``vectors`` is (2M, N) with rows m and M + m owned by node m. Hash words are
    disseminated as integer consensus payloads and norms as exact float
    broadcasts, so all nodes end up with byte-identical estimates.
    """
    config = config or HashConfig()
    vectors = np.asarray(vectors, dtype=float)
    M = topology.n_nodes
    if vectors.ndim != 2 or vectors.shape[0] != 2 * M:
        raise DimensionError(f"Expected (2M, N) = ({2 * M}, N) vectors, got {vectors.shape}")
    weights = metropolis_weights(topology) if weights is None else weights
    projections = projections or ProjectionSet(config.seed, vectors.shape[1], config.n_bits)
    owners = vector_owners(M)

    hashes = [sign_hash(vectors[k], projections, owner=k) for k in range(2 * M)]
    n_words = hashes[0].words.shape[0]
    payload = np.zeros((M, 2 * M, n_words))
    for k, owner in enumerate(owners):
        payload[owner, k] = hashes[k].words
    own_norms = np.zeros((M, 2))
    for m in range(M):
        own_norms[m] = [np.linalg.norm(vectors[m]), np.linalg.norm(vectors[M + m])]

    if M == 1:
        words = payload.reshape(1, 2, n_words)
        norms = own_norms.reshape(1, 1, 2)
    else:
        words = consensus_broadcast(
            payload.reshape(M, -1), weights, tolerance=config.tolerance, integer=True, network=network, kind="HASH_CHUNKS", phase="inner-product"
        ).reshape(M, 2 * M, n_words)
        norms = broadcast_exact(own_norms, weights, tolerance=config.tolerance, network=network, kind="NORM_VALUE", phase="inner-product")

    estimates = []
    for r in range(M):
        node_norms = np.concatenate([norms[r][:, 0], norms[r][:, 1]])
        node_hashes = [SignHash.from_words(words[r, k], config.n_bits, owner=k) for k in range(2 * M)]
        estimates.append(gram_from(node_hashes, node_norms))
    return estimates
