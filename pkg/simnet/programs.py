"""Node programs and the tick loop that drives them over a Network."""
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
from dagster import get_dagster_logger

from common.errors import SimulationError
from protocols.paillier import Ciphertext, FixedPointCodec, decrypt, read_integers
from protocols.secure_sum import (
    SECURE_ROUND_TICKS,
    Keyring,
    SumConfig,
    ciphertexts_bytes,
    designated_neighbor,
    encrypt_share,
    first_round_value,
    integers_bytes,
    mask_aggregate,
    mask_rng,
    share_rng,
    unmask,
)
from protocols.topology import local_update, metropolis_weights, self_weight
from simnet.network import FailurePlan, Network

logger = get_dagster_logger(__name__)


class Outbox:
    """What a node program may do with the network: see its active links and send on them"""

    def __init__(self, network, node):
        self.network = network
        self.node = node

    def neighbours_of(self, node, lookahead=0):
        active = self.network.active_edges(lookahead)
        return sorted({b if a == node else a for a, b in active if node in (a, b)})

    def neighbours(self, lookahead=0):
        return self.neighbours_of(self.node, lookahead)

    def send(self, dst, kind, phase, values=None, payload=None, classification=None):
        return self.network.send(self.node, dst, kind, phase, values=values, payload=payload, classification=classification)

    def broadcast(self, kind, phase, values):
        for dst in self.neighbours():
            self.send(dst, kind, phase, values=values)


class NodeProgram(ABC):
    def __init__(self, node):
        self.node = node
        self.done = False
        self.result = None

    @abstractmethod
    def step(self, tick, inbox, outbox):
        """Consume messages delivered this tick and send the next ones"""


class IdleProgram(NodeProgram):
    def __init__(self, node):
        super().__init__(node)
        self.done = True

    def step(self, tick, inbox, outbox):
        pass


class GatherProgram(NodeProgram):
    """Ships a node's raw column to a collector; the privacy audit must flag it"""

    def __init__(self, node, data, collector=0):
        super().__init__(node)
        self.data = np.asarray(data, dtype=float)
        self.collector = collector
        self.collected = {node: self.data} if node == collector else None

    def step(self, tick, inbox, outbox):
        if tick == 0 and self.node != self.collector:
            outbox.send(self.collector, "CONSENSUS_VALUE", phase="gather", values=self.data)
            self.done = True
        elif tick == 1 and self.node == self.collector:
            for message in inbox:
                self.collected[message.src] = message.values
            self.result = np.stack([self.collected[k] for k in sorted(self.collected)])
            self.done = True


class SecureSumProgram(NodeProgram):
    """One node of the privacy-preserving summation, driven purely by messages.

    ``consensus_rounds`` plain averaging rounds follow the first round, then
    M - 1 min-agreement rounds when ``config.agreement`` is set. Nodes cannot
    observe the global spread, so the round budget is fixed up front.
    """

    def __init__(
        self, node, value, weights, config, consensus_rounds, public_keys=None, keypair=None, secret=None, invocation=0, phase="consensus"
    ):
        super().__init__(node)
        self.own = np.asarray(value, dtype=float).reshape(-1)
        self.value = self.own
        self.weights = weights
        self.config = config
        self.consensus_rounds = consensus_rounds
        self.public_keys = public_keys or {}
        self.keypair = keypair
        self.secret = secret
        self.invocation = invocation
        self.phase = phase
        self.n_nodes = weights.shape[0]
        self.stage = "share"
        self.neighbours = None
        self.designated = None
        self.masks = None
        self.updates = 0

    def _codec(self, public_key):
        return FixedPointCodec(public_key.n, self.config.fraction_bits)

    def _designated_key(self, outbox, node):
        """Public key of ``node``'s designated neighbour; only valid during the share tick"""
        return self.public_keys[designated_neighbor(node, outbox.neighbours_of(node, SECURE_ROUND_TICKS - 1))]

    def step(self, tick, inbox, outbox):
        handler = getattr(self, f"_{self.stage.replace('-', '_')}")
        handler(inbox, outbox)

    def _share(self, inbox, outbox):
        if self.config.encrypt:
            self.neighbours = outbox.neighbours(lookahead=SECURE_ROUND_TICKS - 1)
            self.designated = designated_neighbor(self.node, self.neighbours)
            for receiver in self.neighbours:
                public_key = self._designated_key(outbox, receiver)
                ciphertexts = encrypt_share(
                    self.weights[receiver, self.node] * self.own,
                    public_key,
                    self._codec(public_key),
                    share_rng(self.secret, self.invocation, receiver),
                )
                outbox.send(receiver, "CIPHERTEXT", phase="secure-round", payload=ciphertexts_bytes(ciphertexts))
            self.stage = "aggregate"
        else:
            self.neighbours = outbox.neighbours()
            for receiver in self.neighbours:
                outbox.send(
                    receiver,
                    "CONSENSUS_VALUE",
                    phase="first-round",
                    values=self.weights[receiver, self.node] * self.own,
                    classification="LOCAL_SHARE",
                )
            self.stage = "combine"

    def _aggregate(self, inbox, outbox):
        public_key = self.public_keys[self.designated]
        shares = {
            message.src: Ciphertext.read_all(message.payload, public_key)
            for message in inbox
            if message.kind.value == "CIPHERTEXT"
        }
        aggregate, self.masks = mask_aggregate(
            shares, public_key, self._codec(public_key), mask_rng(self.secret, self.invocation)
        )
        outbox.send(self.designated, "MASKED_SUM_REQUEST", phase="secure-round", payload=ciphertexts_bytes(aggregate))
        self.stage = "decrypt"

    def _decrypt(self, inbox, outbox):
        for message in inbox:
            if message.kind.value != "MASKED_SUM_REQUEST":
                continue
            if self.keypair is None:
                raise SimulationError(self.node, None, f"masked sum request from {message.src} but no keypair held")
            codec = self._codec(self.keypair.public_key)
            masked = [decrypt(ct, self.keypair) for ct in Ciphertext.read_all(message.payload, self.keypair.public_key)]
            addends = len(outbox.neighbours_of(message.src)) + 1
            outbox.send(
                message.src,
                "MASKED_SUM_REPLY",
                phase="secure-round",
                values=np.array([codec.decode(s, addends) for s in masked]),
                payload=integers_bytes(masked),
            )
        self.stage = "unmask"

    def _unmask(self, inbox, outbox):
        reply = next(message for message in inbox if message.kind.value == "MASKED_SUM_REPLY")
        codec = self._codec(self.public_keys[self.designated])
        xi = unmask(read_integers(reply.payload), self.masks, codec, len(self.neighbours))
        self.value = first_round_value(self.weights, self.node, self.own, self.neighbours, xi)
        self._after_round(outbox)

    def _combine(self, inbox, outbox):
        received = sorted((message.src, message.values) for message in inbox)
        value = self_weight(self.weights, self.node, [src for src, _ in received]) * self.own
        for _, share in received:
            value = value + share
        self.value = value
        self._after_round(outbox)

    def _after_round(self, outbox):
        if self.updates < self.consensus_rounds:
            self.stage = "consensus"
            outbox.broadcast("CONSENSUS_VALUE", self.phase, self.value)
        elif self.config.agreement and self.n_nodes > 1:
            self.stage = "agree"
            self.updates = 0
            outbox.broadcast("CONSENSUS_VALUE", "agreement", self.value)
        else:
            self._finish()

    def _consensus(self, inbox, outbox):
        received = sorted(((message.src, message.values) for message in inbox), key=lambda item: item[0])
        self.value = local_update(self.weights, self.node, self.value, received)
        self.updates += 1
        self._after_round(outbox)

    def _agree(self, inbox, outbox):
        self.value = np.min(np.stack([self.value] + [message.values for message in inbox]), axis=0)
        self.updates += 1
        if self.updates < self.n_nodes - 1:
            outbox.broadcast("CONSENSUS_VALUE", "agreement", self.value)
        else:
            self._finish()

    def _finish(self):
        self.result = self.value * self.n_nodes
        self.done = True


@dataclass(frozen=True)
class SimConfig:
    topology: object
    max_ticks: int = 100_000
    keep_messages: bool = True
    hash_payloads: bool = True
    raw_values: object = None


@dataclass
class SimResult:
    results: list
    privacy_log: object
    accounting: object
    transcript_hash: str
    ticks: int
    tag: str
    network: Network


def run(config, programs, failure_plan=None):
    """Tick loop: deliver tick-t messages, step every unfinished node, close the tick"""
    topology = config.topology
    if len(programs) != topology.n_nodes:
        raise ValueError(f"{len(programs)} programs for {topology.n_nodes} nodes")
    network = Network(topology, failure_plan or FailurePlan(), config.keep_messages, config.hash_payloads)
    if config.raw_values is not None:
        network.register_raw(config.raw_values)
    inboxes = {}
    while not all(program.done for program in programs):
        if network.tick >= config.max_ticks:
            raise SimulationError(None, network.tick, f"tick limit {config.max_ticks} reached")
        for program in programs:
            if program.done:
                continue
            try:
                program.step(network.tick, inboxes.get(program.node, []), Outbox(network, program.node))
            except SimulationError:
                raise
            except Exception as exc:
                raise SimulationError(program.node, network.tick, exc) from exc
        inboxes = network.advance()
    logger.info(
        f"Simulation finished at tick {network.tick}: {network.accounting.messages} messages, "
        f"{network.accounting.bytes} bytes"
    )
    return SimResult(
        results=[program.result for program in programs],
        privacy_log=network.privacy_log,
        accounting=network.accounting,
        transcript_hash=network.transcript_hash(),
        ticks=network.tick,
        tag=network.tag,
        network=network,
    )


def secure_sum_programs(summands, topology, consensus_rounds, config=None, keyring=None, weights=None, invocation=0):
    """One SecureSumProgram per node, each holding only its own secret key"""
    config = config or SumConfig()
    weights = metropolis_weights(topology) if weights is None else weights
    summands = np.asarray(summands, dtype=float).reshape(topology.n_nodes, -1)
    public_keys, keypairs, secrets = {}, {}, {}
    if config.encrypt:
        keyring = keyring or Keyring(config.key_bits, config.private_seeds, config.reuse_keys)
        secrets = {m: keyring.secret(m) for m in range(topology.n_nodes)}
        keypairs = {m: keyring.keypair_for(m, invocation) for m in range(topology.n_nodes)}
        public_keys = {m: k.public_key for m, k in keypairs.items()}
    return [
        SecureSumProgram(
            node=m,
            value=summands[m],
            weights=weights,
            config=config,
            consensus_rounds=consensus_rounds,
            public_keys=public_keys,
            keypair=keypairs.get(m),
            secret=secrets.get(m),
            invocation=invocation,
        )
        for m in range(topology.n_nodes)
    ]
