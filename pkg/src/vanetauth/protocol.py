"""Beacons, discovery and the three-phase mutual authentication handshake.

The handshake is a sans-IO state machine: ``AuthSession.start`` and
``AuthSession.receive`` return the messages to send and never touch a
transport themselves. ``handshake`` wires two sessions together in process.
"""
from __future__ import annotations

import enum
import hashlib
import json
import random
import struct
from dataclasses import dataclass, field
from typing import Iterable

from . import crypto
from .certgraph import (CertificateGraph, Certificate, Identity, KeyStore,
                        find_certificate_chain, merge_stores, store_from_dict,
                        store_to_dict, update_keystore, verify_chain)
from .crypto import (AuthFailure, NodeId, PublicKey, cycle_edges, edges_to_int,
                     int_to_edges)
from .zkp import (DEFAULT_DENSITY, DEFAULT_ROUNDS, DEFAULT_VERTICES,
                  CycleInGI, Isomorphism, RoundCommitment, WitnessGraph,
                  build_witness_graph, key_to_cycle,
                  prover_commit, prover_respond, verifier_challenge,
                  verifier_check)

BEACON_TAG = "01"
DEFAULT_TIMEOUT = 10


class MalformedBeacon(ValueError):
    pass


class MalformedMessage(ValueError):
    pass


# -- beacons -----------------------------------------------------------------

def _identity_key(public: PublicKey) -> bytes:
    return b"ku" + crypto.int_bytes(public.exponent) + crypto.int_bytes(public.modulus)


def seal_identity(identity: Identity, timestamp: int, rng: random.Random) -> bytes:
    """Clear 8-byte timestamp followed by (ID, KU, Time) and its signature,
    sealed so that only holders of KU can read or link it."""
    payload = json.dumps({
        "id": identity.node_id.hex(),
        "e": identity.public.exponent,
        "n": identity.public.modulus,
        "t": timestamp,
        "sig": crypto.sign(_identity_payload(identity.node_id, identity.public, timestamp),
                           identity.keys),
    }, sort_keys=True).encode()
    sealed = crypto.symmetric_seal(_identity_key(identity.public), payload,
                                   crypto.rng_nonce(rng))
    return struct.pack(">Q", timestamp) + sealed


def _identity_payload(nid: NodeId, public: PublicKey, timestamp: int) -> bytes:
    return b"|".join([nid.digest, crypto.int_bytes(public.exponent),
                      crypto.int_bytes(public.modulus), str(timestamp).encode()])


def open_identity(blob: bytes, public: PublicKey) -> tuple[NodeId, int] | None:
    """Return (id, timestamp) if ``blob`` was sealed and signed by ``public``."""
    try:
        raw = json.loads(crypto.symmetric_open(_identity_key(public), blob[8:]))
        nid = NodeId.fromhex(raw["id"])
        t = int(raw["t"])
        claimed = PublicKey(int(raw["e"]), int(raw["n"]))
    except (AuthFailure, ValueError, KeyError, TypeError):
        return None
    if claimed != public or t != struct.unpack(">Q", blob[:8])[0]:
        return None
    if not crypto.verify(_identity_payload(nid, public, t), int(raw["sig"]), public):
        return None
    return nid, t


@dataclass(frozen=True)
class Beacon:
    address: str
    pseudonym: bytes
    signed_identity: bytes
    frame_control: int = 1

    @property
    def timestamp(self) -> int:
        return struct.unpack(">Q", self.signed_identity[:8])[0]


def encode_beacon(b: Beacon) -> bytes:
    if "," in b.address:
        raise ValueError("address may not contain commas")
    return ",".join([f"{b.frame_control:02d}", b.address, b.pseudonym.hex(),
                     b.signed_identity.hex()]).encode()


def decode_beacon(data: bytes | str) -> Beacon:
    text = data.decode() if isinstance(data, bytes) else data
    fields = text.split(",")
    if len(fields) != 4:
        raise MalformedBeacon(f"expected 4 fields, got {len(fields)}")
    tag, addr, pseu, blob = fields
    if tag != BEACON_TAG:
        raise MalformedBeacon(f"unexpected frame control {tag!r}")
    try:
        pseudonym = bytes.fromhex(pseu)
        identity = bytes.fromhex(blob)
    except ValueError as exc:
        raise MalformedBeacon(str(exc)) from None
    if len(identity) < 8:
        raise MalformedBeacon("identity blob too short")
    return Beacon(addr, pseudonym, identity, int(tag))


def link_beacon(beacon: Beacon, known: dict[NodeId, PublicKey]) -> NodeId | None:
    """Identify a beacon's sender among already authenticated peers."""
    for nid, public in sorted(known.items()):
        opened = open_identity(beacon.signed_identity, public)
        if opened and opened[0] == nid:
            return nid
    return None


# -- nodes -------------------------------------------------------------------

@dataclass
class Node:
    identity: Identity
    store: KeyStore
    address: str = "10.0.0.1"
    peers: dict[NodeId, PublicKey] = field(default_factory=dict)
    last_beacon_time: int = -1

    @property
    def node_id(self) -> NodeId:
        return self.identity.node_id

    @property
    def pseudonym(self) -> bytes:
        return crypto.pseudonym(self.store)

    def beacon(self, now: int, rng: random.Random) -> Beacon:
        return refresh_pseudonym(self, now, rng)


def refresh_pseudonym(node: Node, now: int, rng: random.Random) -> Beacon:
    """Beacon with the pseudonym of the current store and a freshly signed
    identity blob; timestamps never go backwards per sender."""
    t = max(now, node.last_beacon_time + 1)
    node.last_beacon_time = t
    return Beacon(node.address, node.pseudonym, seal_identity(node.identity, t, rng))


# -- discovery ---------------------------------------------------------------

@dataclass(frozen=True)
class DiscoveryOffer:
    id_hashes: frozenset

    @classmethod
    def from_store(cls, store: KeyStore) -> "DiscoveryOffer":
        return cls(frozenset(crypto.id_hash(v) for v in store.ids()))


def discovery_match(offer: DiscoveryOffer, store: KeyStore) -> set[NodeId]:
    return {v for v in store.ids() if crypto.id_hash(v) in offer.id_hashes}


def select_common_key(matches: Iterable[NodeId], store: KeyStore) -> int:
    matches = sorted(matches)
    if not matches:
        raise ValueError("no common identifier")
    return store.key_of(matches[0]).exponent


def choose_initiator(a: Beacon, b: Beacon) -> bool:
    """True when the sender of ``a`` proves first."""
    return (a.pseudonym, a.address) < (b.pseudonym, b.address)


# -- wire records ------------------------------------------------------------

class Kind(enum.IntEnum):
    D1 = 1
    D2 = 2
    Z1 = 3
    Z2 = 4
    Z3 = 5
    E1 = 6
    E2 = 7
    E3 = 8
    ABORT = 9

    @property
    def phase(self) -> str:
        return self.name[0] if self is not Kind.ABORT else "-"


@dataclass(frozen=True)
class Message:
    kind: Kind
    body: dict

    def payload(self) -> bytes:
        return json.dumps(self.body, sort_keys=True, separators=(",", ":")).encode()


def encode_message(msg: Message) -> bytes:
    payload = msg.payload()
    return struct.pack(">BI", msg.kind, len(payload)) + payload


def decode_message(data: bytes) -> Message:
    if len(data) < 5:
        raise MalformedMessage("record too short")
    kind, size = struct.unpack(">BI", data[:5])
    if len(data) != 5 + size:
        raise MalformedMessage("length prefix does not match record")
    try:
        return Message(Kind(kind), json.loads(data[5:]))
    except ValueError as exc:
        raise MalformedMessage(str(exc)) from None


def _edges_out(edges, n: int) -> str:
    """Edge set as the hex of its upper-triangular adjacency bitmask."""
    return format(edges_to_int(edges, n), "x")


def _edges_in(raw: str, n: int) -> frozenset:
    return frozenset(int_to_edges(int(raw, 16), n))


# -- sessions ----------------------------------------------------------------

class Phase(enum.Enum):
    DISCOVERY = "Discovery"
    AWAIT_GRAPH = "AwaitGraph"
    PROOF_VERIFY = "ProofVerify"
    PROOF_PROVE = "ProofProve"
    EXCHANGE = "Exchange"
    ESTABLISHED = "Established"
    FAILED = "Failed"


class Failure(str, enum.Enum):
    NO_COMMON_KEY = "NoCommonKey"
    PHASE_VIOLATION = "PhaseViolation"
    PROOF_REJECTED = "ProofRejected"
    UNSEAL_FAILURE = "UnsealFailure"
    CHAIN_INVALID = "ChainInvalid"
    MALFORMED = "Malformed"
    TIMEOUT = "Timeout"
    PEER_ABORT = "PeerAbort"


@dataclass
class SessionParams:
    rounds: int = DEFAULT_ROUNDS
    n_vertices: int = DEFAULT_VERTICES
    decoy_density: float = DEFAULT_DENSITY
    timeout: int = DEFAULT_TIMEOUT
    verify_chain: bool = True


class AuthSession:
    """One side of a mutual authentication with a single peer.

    The initiator publishes its witness graph first and proves first; the
    responder proves second. Any message that does not fit the current phase
    moves the session to Failed.
    """

    def __init__(self, node: Node, initiator: bool, rng: random.Random,
                 params: SessionParams | None = None, now: int = 0):
        self.node = node
        self.identity = node.identity
        self.store = node.store  # snapshot taken at session start
        self.initiator = initiator
        self.rng = rng
        self.params = params or SessionParams()
        self.phase = Phase.DISCOVERY
        self.failure: Failure | None = None
        self.detail = ""
        self.last_activity = now

        self.x: int | None = None
        self.own_graph: WitnessGraph | None = None
        self.peer_graph: frozenset | None = None
        self._commitment: RoundCommitment | None = None
        self._pending_iso: frozenset | None = None
        self._challenge: int | None = None
        self.rounds_proved = 0
        self.rounds_verified = 0

        self.peer_id: NodeId | None = None
        self.peer_key: PublicKey | None = None
        self.own_temporal: int | None = None
        self.peer_temporal: int | None = None
        self.peer_store: KeyStore | None = None
        self.chain: list[NodeId] | None = None
        self._sent_e1 = False
        self._sent_e3 = False

    # public surface

    @property
    def done(self) -> bool:
        return self.phase in (Phase.ESTABLISHED, Phase.FAILED)

    @property
    def session_key(self) -> bytes:
        if self.phase is not Phase.ESTABLISHED:
            raise RuntimeError("session not established")
        first, second = ((self.own_temporal, self.peer_temporal) if self.initiator
                         else (self.peer_temporal, self.own_temporal))
        return hashlib.sha256(crypto.int_bytes(first) + b"|" +
                              crypto.int_bytes(second)).digest()

    def seal(self, plaintext: bytes) -> bytes:
        return crypto.symmetric_seal(self.session_key, plaintext,
                                     crypto.rng_nonce(self.rng))

    def open(self, envelope: bytes) -> bytes:
        return crypto.symmetric_open(self.session_key, envelope)

    def secrets(self) -> list[int]:
        """Values that must never cross the wire in clear."""
        vals = [self.identity.keys.private_exponent]
        vals += [v for v in (self.x, self.own_temporal, self.peer_temporal) if v is not None]
        return vals

    def start(self) -> list[Message]:
        offer = DiscoveryOffer.from_store(self.store)
        return [Message(Kind.D1, {"ids": sorted(h.hex() for h in offer.id_hashes)})]

    def tick(self, now: int) -> None:
        if not self.done and now - self.last_activity > self.params.timeout:
            self._fail(Failure.TIMEOUT, f"idle since {self.last_activity}")

    def receive(self, msg: Message, now: int | None = None) -> list[Message]:
        if now is not None:
            self.tick(now)
            self.last_activity = max(self.last_activity, now)
        if self.done:
            return []
        if msg.kind is Kind.ABORT:
            self._fail(Failure.PEER_ABORT, str(msg.body.get("reason", "")))
            return []
        handler = self._expected().get(msg.kind)
        if handler is None:
            return self._abort(Failure.PHASE_VIOLATION,
                               f"{msg.kind.name} not expected in {self.phase.value}")
        try:
            return handler(msg.body)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, AuthFailure):
                return self._abort(Failure.UNSEAL_FAILURE, str(exc))
            return self._abort(Failure.MALFORMED, f"{msg.kind.name}: {exc}")

    # state machine

    def _expected(self):
        if self.phase is Phase.DISCOVERY:
            return {Kind.D1: self._on_offer}
        if self.phase is Phase.AWAIT_GRAPH:
            return {Kind.D2: self._on_graph}
        if self.phase is Phase.PROOF_PROVE:
            return {Kind.Z2: self._on_challenge}
        if self.phase is Phase.PROOF_VERIFY:
            if self._pending_iso is None:
                return {Kind.Z1: self._on_commitment}
            return {Kind.Z3: self._on_response}
        if self.phase is Phase.EXCHANGE:
            if self.peer_key is None:
                return {Kind.E1: self._on_public_key}
            if self.peer_temporal is None:
                return {Kind.E2: self._on_temporal_key}
            return {Kind.E3: self._on_store}
        return {}

    def _on_offer(self, body):
        offer = DiscoveryOffer(frozenset(bytes.fromhex(h) for h in body["ids"]))
        matches = discovery_match(offer, self.store)
        if not matches:
            self._fail(Failure.NO_COMMON_KEY, "key stores share no identifier")
            return []
        self.x = select_common_key(matches, self.store)
        p = self.params
        self.own_graph = build_witness_graph(self.x, p.n_vertices, p.decoy_density, self.rng)
        self.phase = Phase.AWAIT_GRAPH
        return [self._graph_message()] if self.initiator else []

    def _graph_message(self) -> Message:
        g = self.own_graph
        return Message(Kind.D2, {"n": g.vertex_count,
                                 "edges": _edges_out(g.edges, g.vertex_count)})

    def _on_graph(self, body):
        n = self.params.n_vertices
        if int(body["n"]) != n:
            return self._abort(Failure.MALFORMED, "vertex count mismatch")
        edges = _edges_in(body["edges"], n)
        if not set(cycle_edges(key_to_cycle(self.x, n))) <= edges:
            return self._abort(Failure.PROOF_REJECTED, "graph does not embed the common key")
        self.peer_graph = edges
        if self.initiator:
            self.phase = Phase.PROOF_PROVE
            return [self._commit()]
        self.phase = Phase.PROOF_VERIFY
        return [self._graph_message()]

    def _commit(self) -> Message:
        self._commitment = prover_commit(self.own_graph, self.rng)
        return Message(Kind.Z1, {"gi": _edges_out(self._commitment.iso_graph,
                                                  self.own_graph.vertex_count)})

    def _on_challenge(self, body):
        b = int(body["b"])
        if b not in (0, 1):
            raise ValueError("challenge must be a bit")
        resp = prover_respond(self._commitment, self.own_graph, b)
        self._commitment = None
        self.rounds_proved += 1
        if isinstance(resp, Isomorphism):
            out = [Message(Kind.Z3, {"perm": list(resp.permutation)})]
        else:
            out = [Message(Kind.Z3, {"cycle": list(resp.cycle)})]
        if self.rounds_proved < self.params.rounds:
            out.append(self._commit())
        elif self.initiator:
            self.phase = Phase.PROOF_VERIFY
        else:
            self.phase = Phase.EXCHANGE
        return out

    def _on_commitment(self, body):
        self._pending_iso = _edges_in(body["gi"], self.params.n_vertices)
        self._challenge = verifier_challenge(self.rng)
        return [Message(Kind.Z2, {"b": self._challenge})]

    def _on_response(self, body):
        if "perm" in body:
            resp = Isomorphism(tuple(int(v) for v in body["perm"]))
        elif "cycle" in body:
            resp = CycleInGI(tuple(int(v) for v in body["cycle"]))
        else:
            raise ValueError("empty response")
        ok = verifier_check(self.peer_graph, self._pending_iso, self._challenge, resp,
                            self.params.n_vertices)
        self._pending_iso = self._challenge = None
        if not ok:
            return self._abort(Failure.PROOF_REJECTED,
                               f"round {self.rounds_verified + 1} rejected")
        self.rounds_verified += 1
        if self.rounds_verified < self.params.rounds:
            return []
        if self.initiator:
            self.phase = Phase.EXCHANGE
            return [self._public_key_message()]
        self.phase = Phase.PROOF_PROVE
        return [self._commit()]

    def _public_key_message(self) -> Message:
        self._sent_e1 = True
        plain = json.dumps({"id": self.identity.node_id.hex(),
                            "e": self.identity.public.exponent,
                            "n": self.identity.public.modulus}).encode()
        sealed = crypto.symmetric_seal(self.x, plain, crypto.rng_nonce(self.rng))
        return Message(Kind.E1, {"sealed": sealed.hex()})

    def _on_public_key(self, body):
        raw = json.loads(crypto.symmetric_open(self.x, bytes.fromhex(body["sealed"])))
        self.peer_id = NodeId.fromhex(raw["id"])
        self.peer_key = PublicKey(int(raw["e"]), int(raw["n"]))
        out = [] if self._sent_e1 else [self._public_key_message()]
        self.own_temporal = self.rng.randrange(2, self.peer_key.modulus)
        out.append(Message(Kind.E2, {"k": crypto.rsa_encrypt(self.own_temporal, self.peer_key)}))
        return out

    def _on_temporal_key(self, body):
        if not self._sent_e1:
            raise ValueError("temporal key before public key exchange")
        self.peer_temporal = crypto.rsa_decrypt(int(body["k"]), self.identity.keys)
        plain = json.dumps(store_to_dict(self.store), sort_keys=True).encode()
        sealed = crypto.symmetric_seal(self.peer_temporal, plain, crypto.rng_nonce(self.rng))
        self._sent_e3 = True
        return [Message(Kind.E3, {"sealed": sealed.hex()})]

    def _on_store(self, body):
        if not self._sent_e3:
            return self._abort(Failure.PHASE_VIOLATION, "E3 before own E3")
        try:
            plain = crypto.symmetric_open(self.own_temporal, bytes.fromhex(body["sealed"]))
        except AuthFailure as exc:
            return self._abort(Failure.UNSEAL_FAILURE, str(exc))
        store = store_from_dict(json.loads(plain))
        if store.owner != self.peer_id or store.key_of(self.peer_id) != self.peer_key:
            return self._abort(Failure.CHAIN_INVALID, "store owner does not match peer")
        self.peer_store = store
        if self.params.verify_chain:
            reason = self._check_chain()
            if reason:
                return self._abort(Failure.CHAIN_INVALID, reason)
        self.phase = Phase.ESTABLISHED
        return []

    def _check_chain(self) -> str:
        union = merge_stores(self.store, self.peer_store)
        me = self.identity.node_id
        chain = find_certificate_chain(union, me, self.peer_id)
        if chain is None:
            return "no certificate chain to peer"
        check = verify_chain(chain, union, self.last_activity, self.identity.public)
        if not check:
            return check.reason
        last = union.certificate(chain[-2], chain[-1])
        if last.subject_key != self.peer_key:
            return "chain ends in a different key"
        self.chain = chain
        return ""

    def _fail(self, failure: Failure, detail: str = "") -> None:
        self.phase = Phase.FAILED
        self.failure = failure
        self.detail = detail

    def _abort(self, failure: Failure, detail: str = "") -> list[Message]:
        self._fail(failure, detail)
        return [Message(Kind.ABORT, {"reason": failure.value})]


def session_advance(s: AuthSession, incoming: Message, now: int | None = None):
    out = s.receive(incoming, now)
    return s, out


def updated_store(session: AuthSession, lim: int | None = None,
                  extra: Iterable[Certificate] = ()) -> KeyStore:
    """The session owner's store after absorbing the peer's store."""
    if session.phase is not Phase.ESTABLISHED:
        raise RuntimeError("session not established")
    other = merge_stores(session.peer_store, CertificateGraph.build({}, extra))
    return update_keystore(session.store, other, lim)


# -- in-process driver -------------------------------------------------------

@dataclass(frozen=True)
class LogRecord:
    direction: str
    phase: str
    kind: str
    size: int
    digest: str

    def to_line(self) -> str:
        return f"{self.direction},{self.phase},{self.kind},{self.size},{self.digest}"


@dataclass
class HandshakeResult:
    a: AuthSession
    b: AuthSession
    log: list[LogRecord]
    wire: list[bytes]

    @property
    def established(self) -> bool:
        return self.a.phase is Phase.ESTABLISHED and self.b.phase is Phase.ESTABLISHED

    @property
    def failure(self) -> Failure | None:
        return self.a.failure or self.b.failure


def handshake(node_a: Node, node_b: Node, rng_a: random.Random, rng_b: random.Random,
              params: SessionParams | None = None, now: int = 0,
              initiator_a: bool | None = None, labels=("A", "B")) -> HandshakeResult:
    """Run both sides over ordered in-memory queues until neither has
    anything left to send."""
    if initiator_a is None:
        initiator_a = (node_a.pseudonym, node_a.address) < (node_b.pseudonym, node_b.address)
    a = AuthSession(node_a, initiator_a, rng_a, params, now)
    b = AuthSession(node_b, not initiator_a, rng_b, params, now)
    la, lb = labels
    log: list[LogRecord] = []
    wire: list[bytes] = []
    to_b: list[bytes] = []
    to_a: list[bytes] = []

    def send(msgs, queue, direction):
        for m in msgs:
            raw = encode_message(m)
            wire.append(raw)
            log.append(LogRecord(direction, m.kind.phase, m.kind.name, len(raw),
                                 hashlib.sha256(raw).hexdigest()[:16]))
            queue.append(raw)

    send(a.start(), to_b, f"{la}->{lb}")
    send(b.start(), to_a, f"{lb}->{la}")
    while to_a or to_b:
        if to_b:
            send(b.receive(decode_message(to_b.pop(0)), now), to_a, f"{lb}->{la}")
        if to_a:
            send(a.receive(decode_message(to_a.pop(0)), now), to_b, f"{la}->{lb}")
    return HandshakeResult(a, b, log, wire)
