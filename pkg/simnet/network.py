"""Synchronous message network: active edges per tick, delivery, accounting and transcripts."""
import hashlib
import json
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum

import networkx as nx
import numpy as np
import pandas as pd
from dagster import get_dagster_logger

from common.errors import SimulationError
from protocols.topology import edge_key

logger = get_dagster_logger(__name__)

FLOAT_BYTES = 8


class MessageKind(str, Enum):
    CIPHERTEXT = "CIPHERTEXT"
    MASKED_SUM_REQUEST = "MASKED_SUM_REQUEST"
    MASKED_SUM_REPLY = "MASKED_SUM_REPLY"
    CONSENSUS_VALUE = "CONSENSUS_VALUE"
    HASH_CHUNKS = "HASH_CHUNKS"
    NORM_VALUE = "NORM_VALUE"


class Classification(str, Enum):
    ENCRYPTED = "ENCRYPTED"
    MASKED_AGGREGATE = "MASKED_AGGREGATE"
    PUBLIC_STATISTIC = "PUBLIC_STATISTIC"
    HASH = "HASH"
    NORM = "NORM"
    LOCAL_SHARE = "LOCAL_SHARE"


DEFAULT_CLASSIFICATION = {
    MessageKind.CIPHERTEXT: Classification.ENCRYPTED,
    MessageKind.MASKED_SUM_REQUEST: Classification.ENCRYPTED,
    MessageKind.MASKED_SUM_REPLY: Classification.MASKED_AGGREGATE,
    MessageKind.CONSENSUS_VALUE: Classification.PUBLIC_STATISTIC,
    MessageKind.HASH_CHUNKS: Classification.HASH,
    MessageKind.NORM_VALUE: Classification.NORM,
}


@dataclass(frozen=True, eq=False)
class Message:
    id: int
    src: int
    dst: int
    tick: int
    kind: MessageKind
    phase: str
    classification: Classification
    size: int
    payload: bytes = field(default=None, repr=False)
    values: np.ndarray = field(default=None, repr=False)

    def header(self):
        return {
            "id": self.id,
            "src": self.src,
            "dst": self.dst,
            "tick": self.tick,
            "kind": self.kind.value,
            "phase": self.phase,
            "classification": self.classification.value,
            "size": self.size,
        }

    def body(self):
        if self.payload is not None:
            return self.payload
        if self.values is not None:
            return np.asarray(self.values, dtype=">f8").tobytes()
        return b""


@dataclass(frozen=True)
class PrivacyEntry:
    message_id: int
    src: int
    dst: int
    tick: int
    kind: MessageKind
    phase: str
    classification: Classification
    raw_data_exposed: bool


@dataclass
class PrivacyLog:
    entries: list = field(default_factory=list)
    caveats: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def to_frame(self):
        return pd.DataFrame(
            [
                {
                    "message_id": e.message_id,
                    "src": e.src,
                    "dst": e.dst,
                    "tick": e.tick,
                    "kind": e.kind.value,
                    "phase": e.phase,
                    "classification": e.classification.value,
                    "raw_data_exposed": e.raw_data_exposed,
                }
                for e in self.entries
            ],
            columns=["message_id", "src", "dst", "tick", "kind", "phase", "classification", "raw_data_exposed"],
        )


@dataclass
class Accounting:
    """Message and byte counts per protocol phase and per message kind"""

    by_phase: dict = field(default_factory=lambda: defaultdict(lambda: {"messages": 0, "bytes": 0}))
    by_kind: dict = field(default_factory=lambda: defaultdict(lambda: {"messages": 0, "bytes": 0}))

    def add(self, phase, kind, size):
        for bucket in (self.by_phase[phase], self.by_kind[kind.value]):
            bucket["messages"] += 1
            bucket["bytes"] += size

    @property
    def messages(self):
        return sum(b["messages"] for b in self.by_phase.values())

    @property
    def bytes(self):
        return sum(b["bytes"] for b in self.by_phase.values())

    def to_dict(self):
        return {
            "messages": self.messages,
            "bytes": self.bytes,
            "by_phase": {k: dict(v) for k, v in sorted(self.by_phase.items())},
            "by_kind": {k: dict(v) for k, v in sorted(self.by_kind.items())},
        }

    def to_frame(self):
        return pd.DataFrame(
            [{"phase": phase, **counts} for phase, counts in sorted(self.by_phase.items())],
            columns=["phase", "messages", "bytes"],
        )


@dataclass(frozen=True)
class FailurePlan:
    """Persistent line cuts: edge (a, b) carries nothing sent at tick >= its cut tick"""

    cuts: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "cuts", tuple((edge_key(*edge), int(tick)) for edge, tick in self.cuts))

    @classmethod
    def single_cut(cls, edge, tick=0):
        return cls(((tuple(edge), tick),))

    def cut_edges(self, tick):
        return {edge for edge, cut_tick in self.cuts if cut_tick <= tick}

    def active_edges(self, topology, tick):
        removed = self.cut_edges(tick)
        return frozenset(e for e in topology.edges if e not in removed)

    def keeps_connected(self, topology):
        """Cuts are persistent, so the final residual graph is the worst case"""
        graph = topology.graph.copy()
        graph.remove_edges_from(edge for edge, _ in self.cuts)
        return nx.is_connected(graph)

    def check(self, topology):
        """Returns a run tag: ``"connected"`` or ``"disconnected"`` (with a warning)"""
        unknown = [edge for edge, _ in self.cuts if edge not in set(topology.edges)]
        if unknown:
            raise ValueError(f"Failure plan cuts edges not in the topology: {unknown}")
        if self.keeps_connected(topology):
            return "connected"
        logger.warning(f"Failure plan {list(self.cuts)} disconnects the topology")
        return "disconnected"

    def to_dict(self):
        return {"cuts": [{"edge": list(edge), "tick": tick} for edge, tick in self.cuts]}

    @classmethod
    def from_dict(cls, payload):
        return cls(tuple((tuple(c["edge"]), c.get("tick", 0)) for c in payload.get("cuts", [])))


class Network:
    """Round-based network over a topology.

    Messages sent during tick t are delivered at the t -> t+1 boundary and are
    returned by ``advance``. Every send is accounted, hashed into the transcript
    digest and logged for the privacy audit.
    """

    def __init__(self, topology, failure_plan=None, keep_messages=False, hash_payloads=False):
        self.topology = topology
        self.failure_plan = failure_plan or FailurePlan()
        self.tag = self.failure_plan.check(topology)
        self.keep_messages = keep_messages
        self.hash_payloads = hash_payloads
        self.tick = 0
        self.messages = []
        self.privacy_log = PrivacyLog()
        self.accounting = Accounting()
        self._digest = hashlib.blake2b(digest_size=32)
        self._pending = defaultdict(list)
        self._raw = None
        self._next_id = 0
        self._active = {}

    def register_raw(self, values):
        """Raw observations the audit must never find in a non-encrypted payload"""
        values = np.asarray(values, dtype=float).ravel()
        self._raw = np.unique(values[(values != 0.0) & (values != 1.0)])

    def active_edges(self, lookahead=0):
        tick = self.tick + lookahead
        if tick not in self._active:
            self._active[tick] = self.failure_plan.active_edges(self.topology, tick)
        return self._active[tick]

    def note_caveat(self, node, text):
        self.privacy_log.caveats.append({"node": node, "tick": self.tick, "note": text})

    def _exposes_raw(self, values, classification):
        if self._raw is None or values is None or classification == Classification.ENCRYPTED:
            return False
        return bool(np.isin(np.asarray(values, dtype=float).ravel(), self._raw).any())

    def send(self, src, dst, kind, phase, values=None, payload=None, classification=None):
        if src != dst and edge_key(src, dst) not in self.active_edges():
            raise SimulationError(src, self.tick, f"edge ({src}, {dst}) is not active")
        kind = MessageKind(kind)
        classification = Classification(classification) if classification else DEFAULT_CLASSIFICATION[kind]
        if values is not None:
            values = np.asarray(values, dtype=float)
        size = len(payload) if payload is not None else FLOAT_BYTES * (0 if values is None else values.size)
        message = Message(
            id=self._next_id,
            src=src,
            dst=dst,
            tick=self.tick,
            kind=kind,
            phase=phase,
            classification=classification,
            size=size,
            payload=payload,
            values=values,
        )
        self._next_id += 1
        self.accounting.add(phase, kind, size)
        self.privacy_log.entries.append(
            PrivacyEntry(
                message_id=message.id,
                src=src,
                dst=dst,
                tick=self.tick,
                kind=kind,
                phase=phase,
                classification=classification,
                raw_data_exposed=self._exposes_raw(values, classification),
            )
        )
        self._digest.update(json.dumps(message.header(), sort_keys=True).encode("utf-8"))
        if self.hash_payloads:
            self._digest.update(message.body())
        self._pending[dst].append(message)
        if self.keep_messages:
            self.messages.append(message)
        return message

    def advance(self):
        """Close the current tick; returns the delivered messages keyed by destination"""
        delivered = self._pending
        self._pending = defaultdict(list)
        self.tick += 1
        return delivered

    def record_exchange(self, values, active_edges, kind="CONSENSUS_VALUE", phase="consensus", classification=None):
        """One consensus round: both endpoints of every active edge send their current row"""
        edges = self.active_edges() if active_edges is None else active_edges
        for a, b in sorted(edges):
            self.send(a, b, kind, phase, values=values[a], classification=classification)
            self.send(b, a, kind, phase, values=values[b], classification=classification)
        return self.advance()

    def transcript_hash(self):
        return self._digest.copy().hexdigest()

    def transcript_frame(self):
        if not self.keep_messages:
            raise SimulationError(None, self.tick, "transcript export needs keep_messages=True")
        return pd.DataFrame(
            [{**m.header(), "payload": m.body().hex()} for m in self.messages],
            columns=["id", "src", "dst", "tick", "kind", "phase", "classification", "size", "payload"],
        )

    def export_ndjson(self, path):
        """One JSON object per message, one message per line"""
        self.transcript_frame().to_json(path, orient="records", lines=True)
        logger.info(f"Wrote {len(self.messages)} messages to {path}")
        return path
