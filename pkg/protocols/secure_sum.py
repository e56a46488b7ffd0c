"""Privacy-preserving distributed summation.

The first consensus round is computed under Paillier encryption: every
neighbour i of node m encrypts alpha_{m,i} G_i under the public key of m's
designated neighbour (its lowest-index neighbour), node m multiplies the
ciphertexts together with an encrypted random mask, the designated neighbour
decrypts only the masked aggregate and node m removes the mask. All later
rounds are plain average consensus; every node finally scales by M.
"""
import random
from dataclasses import dataclass, field

import numpy as np
from dagster import get_dagster_logger

from common.errors import ProtocolError
from common.seeding import derive_seed, fresh_seed
from protocols.paillier import (
    DEFAULT_KEY_BITS,
    FRACTION_BITS,
    FixedPointCodec,
    add_ciphertexts,
    decrypt,
    encrypt,
    int_to_bytes,
    keygen,
)
from protocols.topology import DEFAULT_TOLERANCE, active_adjacency, local_update, metropolis_weights, min_agreement, run_consensus, self_weight

logger = get_dagster_logger(__name__)

# ticks consumed by the encrypted first round: shares, masked request, masked reply
SECURE_ROUND_TICKS = 3


@dataclass(frozen=True)
class SumConfig:
    encrypt: bool = True
    key_bits: int = DEFAULT_KEY_BITS
    fraction_bits: int = FRACTION_BITS
    tolerance: float = DEFAULT_TOLERANCE
    max_rounds: int = None
    rounds: int = None
    agreement: bool = True
    reuse_keys: bool = True
    # one secret per farm, never sent; None draws fresh entropy
    private_seeds: tuple = None


class Keyring:
    """Each farm's private material: Paillier keypairs, encryption nonces and masks.

    Everything for farm m derives from ``private_seeds[m]``, known only to m.
    """

    def __init__(self, bits=DEFAULT_KEY_BITS, private_seeds=None, reuse=True):
        self.bits = bits
        self.reuse = reuse
        self._secrets = {} if private_seeds is None else dict(enumerate(int(s) for s in private_seeds))
        self._keys = {}

    def secret(self, node):
        if node not in self._secrets:
            self._secrets[node] = fresh_seed()
        return self._secrets[node]

    def keypair_for(self, node, invocation=0):
        key = node if self.reuse else (node, invocation)
        if key not in self._keys:
            purpose = "paillier" if self.reuse else f"paillier/{invocation}"
            self._keys[key] = keygen(self.bits, derive_seed(self.secret(node), purpose))
        return self._keys[key]

    def public_keys(self, nodes, invocation=0):
        return {node: self.keypair_for(node, invocation).public_key for node in nodes}


@dataclass
class SecureRoundTranscript:
    node: int
    designated: int
    masks: list
    neighbor_ciphertexts: dict
    aggregate: list
    masked_sums: list
    result: np.ndarray
    codec: FixedPointCodec = field(repr=False)

    @property
    def single_neighbor(self):
        return len(self.neighbor_ciphertexts) == 1

    @property
    def mask_values(self):
        return np.array([m / self.codec.scale for m in self.masks])

    @property
    def masked_values(self):
        """Masked sums as the designated neighbour sees them"""
        addends = len(self.neighbor_ciphertexts) + 1
        return np.array([self.codec.decode(s, addends) for s in self.masked_sums])


@dataclass
class SumResult:
    values: np.ndarray
    rounds: int
    spreads: list = field(default_factory=list)
    transcripts: list = field(default_factory=list)


def designated_neighbor(node, neighbours):
    if not neighbours:
        raise ProtocolError(f"Node {node} has no active neighbour to hold the decryption key")
    return min(neighbours)


def share_rng(secret, invocation, receiver):
    """Nonces for the shares a node sends, drawn from its own secret"""
    return random.Random(derive_seed(secret, f"share/{invocation}/{receiver}"))


def mask_rng(secret, invocation):
    return random.Random(derive_seed(secret, f"mask/{invocation}"))


def encrypt_share(values, public_key, codec, rng):
    """Neighbour side: encrypt alpha_{m,i} G_i element by element"""
    return [encrypt(codec.encode(x), public_key, rng) for x in np.ravel(values)]


def mask_aggregate(ciphertexts, public_key, codec, rng, mask=None):
    """Node side: multiply the neighbours' ciphertexts together with Enc(R_0) per element.

    ``mask`` fixes R_0 to a real value; otherwise it is drawn uniformly over the
    codec's signed range.
    """
    shares = [ciphertexts[i] for i in sorted(ciphertexts)]
    aggregate, masks = [], []
    for k in range(len(shares[0])):
        r0 = codec.random_mask(rng) if mask is None else codec.to_fixed(mask)
        masks.append(r0)
        aggregate.append(add_ciphertexts([share[k] for share in shares] + [encrypt(r0 % codec.n, public_key, rng)]))
    return aggregate, masks


def decrypt_masked(aggregate, keypair):
    """Designated-neighbour side: only the masked sums are ever decrypted"""
    return [decrypt(ct, keypair) for ct in aggregate]


def unmask(masked_sums, masks, codec, addends):
    return np.array([codec.decode((s - r0) % codec.n, addends) for s, r0 in zip(masked_sums, masks)])


def secure_local_sum(node, ciphertexts, keypair, codec, rng, mask=None):
    """Xi_m = sum over neighbours of alpha_{m,i} G_i, never seen term by term.

    ``ciphertexts`` maps each neighbour index to its encrypted share vector;
    ``keypair`` belongs to the designated neighbour.
    """
    if not ciphertexts:
        raise ProtocolError(f"Node {node} has no neighbour shares to sum")
    designated = min(ciphertexts)
    aggregate, masks = mask_aggregate(ciphertexts, keypair.public_key, codec, rng, mask)
    masked_sums = decrypt_masked(aggregate, keypair)
    result = unmask(masked_sums, masks, codec, len(ciphertexts))
    if len(ciphertexts) == 1:
        logger.warning(f"Node {node} has a single neighbour; its masked sum reveals that neighbour's share")
    transcript = SecureRoundTranscript(
        node=node,
        designated=designated,
        masks=masks,
        neighbor_ciphertexts=ciphertexts,
        aggregate=aggregate,
        masked_sums=masked_sums,
        result=result,
        codec=codec,
    )
    return result, transcript


def first_round_value(weights, node, own, neighbours, neighbour_sum):
    """G_m^1 = alpha_{m,m} G_m^0 + Xi_m"""
    return self_weight(weights, node, neighbours) * own + neighbour_sum


def ciphertexts_bytes(ciphertexts):
    return b"".join(ct.to_bytes() for ct in ciphertexts)


def integers_bytes(values):
    return b"".join(int_to_bytes(v) for v in values)


def secure_first_round(values, weights, config, keyring, network=None, invocation=0):
    """Encrypted first consensus round for every node; returns (G^1, transcripts)"""
    M = values.shape[0]
    active = network.active_edges(lookahead=SECURE_ROUND_TICKS - 1) if network is not None else None
    neighbours = active_adjacency(weights, active)
    designated = [designated_neighbor(m, neighbours[m]) for m in range(M)]
    keypairs = [keyring.keypair_for(d, invocation) for d in designated]
    codecs = [FixedPointCodec(k.public_key.n, config.fraction_bits) for k in keypairs]

    shares = {
        m: {
            i: encrypt_share(
                weights[m, i] * values[i], keypairs[m].public_key, codecs[m], share_rng(keyring.secret(i), invocation, m)
            )
            for i in neighbours[m]
        }
        for m in range(M)
    }
    if network is not None:
        for m in range(M):
            for i, cts in shares[m].items():
                network.send(i, m, "CIPHERTEXT", phase="secure-round", payload=ciphertexts_bytes(cts))
        network.advance()

    aggregates = {}
    for m in range(M):
        aggregates[m] = mask_aggregate(shares[m], keypairs[m].public_key, codecs[m], mask_rng(keyring.secret(m), invocation))
        if network is not None:
            network.send(m, designated[m], "MASKED_SUM_REQUEST", phase="secure-round", payload=ciphertexts_bytes(aggregates[m][0]))
    if network is not None:
        network.advance()

    masked = {m: decrypt_masked(aggregates[m][0], keypairs[m]) for m in range(M)}
    if network is not None:
        for m in range(M):
            addends = len(neighbours[m]) + 1
            reply = np.array([codecs[m].decode(s, addends) for s in masked[m]])
            network.send(
                designated[m], m, "MASKED_SUM_REPLY", phase="secure-round", values=reply, payload=integers_bytes(masked[m])
            )
        network.advance()

    updated = np.empty_like(values)
    transcripts = []
    for m in range(M):
        aggregate, masks = aggregates[m]
        xi = unmask(masked[m], masks, codecs[m], len(neighbours[m])).reshape(values[m].shape)
        updated[m] = first_round_value(weights, m, values[m], neighbours[m], xi)
        if len(neighbours[m]) == 1:
            logger.warning(f"Node {m} has a single neighbour; its masked sum reveals that neighbour's share")
            if network is not None:
                network.note_caveat(m, f"node {m} has one neighbour ({neighbours[m][0]}); its share is revealed by subtraction")
        transcripts.append(
            SecureRoundTranscript(
                node=m,
                designated=designated[m],
                masks=masks,
                neighbor_ciphertexts=shares[m],
                aggregate=aggregate,
                masked_sums=masked[m],
                result=xi,
                codec=codecs[m],
            )
        )
    return updated, transcripts


def plaintext_first_round(values, weights, network=None):
    """First round without encryption; shares cross the wire as LOCAL_SHARE messages"""
    active = network.active_edges() if network is not None else None
    neighbours = active_adjacency(weights, active)
    if network is not None:
        for m, row in enumerate(neighbours):
            for i in row:
                network.send(i, m, "CONSENSUS_VALUE", phase="first-round", values=weights[m, i] * values[i], classification="LOCAL_SHARE")
        network.advance()
    return np.stack(
        [local_update(weights, m, values[m], [(i, values[i]) for i in row]) for m, row in enumerate(neighbours)]
    )


def ppd_sum(summands, topology, weights=None, config=None, network=None, keyring=None, invocation=0, phase="consensus"):
    """Every node obtains sum_m l_m without revealing its own l_m.

    ``summands`` is (M,) or (M, ...); the result has the same shape, row m being
    node m's copy of the total.
    """
    config = config or SumConfig()
    weights = metropolis_weights(topology) if weights is None else weights
    summands = np.asarray(summands, dtype=float)
    shape = summands.shape
    M = shape[0]
    values = summands.reshape(M, -1)
    if M == 1:
        return SumResult(values=summands.copy(), rounds=0)
    if not np.all(np.isfinite(values)):
        raise ValueError("Local summands must be finite")

    transcripts = []
    if config.encrypt:
        keyring = keyring or Keyring(config.key_bits, config.private_seeds, config.reuse_keys)
        first, transcripts = secure_first_round(values, weights, config, keyring, network, invocation)
    else:
        first = plaintext_first_round(values, weights, network)
    fixed = None if config.rounds is None else max(config.rounds - 1, 0)
    result = run_consensus(
        first,
        weights,
        tolerance=config.tolerance,
        max_rounds=config.max_rounds,
        network=network,
        phase=phase,
        rounds=fixed,
    )
    agreed = min_agreement(result.values, weights, network) if config.agreement else result.values
    return SumResult(
        values=(agreed * M).reshape(shape),
        rounds=1 + result.rounds,
        spreads=result.spreads,
        transcripts=transcripts,
    )
