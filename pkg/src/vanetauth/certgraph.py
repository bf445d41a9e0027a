"""Certificate graphs, bounded key stores and the degree-greedy store update.

Graphs are treated as immutable snapshots: every operation returns a new
value and never mutates its inputs.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping

from .crypto import IdentityKeyPair, NodeId, PublicKey, int_bytes, sign, verify

DAY = 86400
DEFAULT_LIFETIME = 30 * DAY
DEFAULT_THRESHOLD = 2


class UnknownNode(KeyError):
    pass


class InsufficientSponsors(ValueError):
    pass


@dataclass(frozen=True)
class Identity:
    """A node's id together with its identity key pair."""
    node_id: NodeId
    keys: IdentityKeyPair

    @property
    def public(self) -> PublicKey:
        return self.keys.public


@dataclass(frozen=True)
class Certificate:
    issuer: NodeId
    subject: NodeId
    subject_key: PublicKey
    signature: int
    issued_at: int
    expires_at: int

    @property
    def direction(self) -> tuple[NodeId, NodeId]:
        return (self.issuer, self.subject)

    def payload(self) -> bytes:
        return certificate_payload(self.subject, self.subject_key, self.issued_at)

    def verify(self, issuer_key: PublicKey) -> bool:
        return verify(self.payload(), self.signature, issuer_key)

    def expired(self, now: int) -> bool:
        return self.expires_at <= now


def certificate_payload(subject: NodeId, key: PublicKey, issued_at: int) -> bytes:
    return b"|".join([bytes(subject), int_bytes(key.exponent),
                      int_bytes(key.modulus), str(issued_at).encode()])


def issue_certificate(issuer: Identity, subject: NodeId, subject_key: PublicKey,
                      now: int, lifetime: int = DEFAULT_LIFETIME) -> Certificate:
    if lifetime <= 0:
        raise ValueError("lifetime must be positive")
    sig = sign(certificate_payload(subject, subject_key, now), issuer.keys)
    return Certificate(issuer.node_id, subject, subject_key, sig, now, now + lifetime)


def _edge(a: NodeId, b: NodeId) -> tuple[NodeId, NodeId]:
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class CertificateGraph:
    """Vertices carry public keys; an undirected edge exists when both
    directed certificates between its endpoints are held."""
    keys: Mapping[NodeId, PublicKey] = field(default_factory=dict)
    certs: Mapping[tuple[NodeId, NodeId], Certificate] = field(default_factory=dict)

    @classmethod
    def build(cls, keys: Mapping[NodeId, PublicKey] = (),
              certs: Iterable[Certificate] = ()) -> "CertificateGraph":
        keys = dict(keys)
        table: dict[tuple[NodeId, NodeId], Certificate] = {}
        for cert in certs:
            if cert.issuer == cert.subject:
                continue
            keys.setdefault(cert.subject, cert.subject_key)
            old = table.get(cert.direction)
            if old is None or cert.issued_at > old.issued_at:
                table[cert.direction] = cert
        return cls(keys, table)

    @property
    def vertices(self) -> set[NodeId]:
        return set(self.keys)

    def __contains__(self, v: NodeId) -> bool:
        return v in self.keys

    def __len__(self) -> int:
        return len(self.keys)

    @cached_property
    def _edges(self) -> frozenset:
        certs, keys = self.certs, self.keys
        return frozenset(_edge(a, b) for (a, b) in certs
                         if a < b and (b, a) in certs and a in keys and b in keys)

    @cached_property
    def _adjacency(self) -> dict[NodeId, frozenset]:
        adj: dict[NodeId, set[NodeId]] = {v: set() for v in self.keys}
        for a, b in self._edges:
            adj[a].add(b)
            adj[b].add(a)
        return {v: frozenset(n) for v, n in adj.items()}

    def edges(self) -> set[tuple[NodeId, NodeId]]:
        return set(self._edges)

    def adjacency(self) -> dict[NodeId, set[NodeId]]:
        return {v: set(n) for v, n in self._adjacency.items()}

    def neighbors(self, v: NodeId) -> set[NodeId]:
        if v not in self.keys:
            raise UnknownNode(v)
        return set(self._adjacency[v])

    def edge_certificates(self, a: NodeId, b: NodeId) -> tuple[Certificate, Certificate]:
        return self.certs[(a, b)], self.certs[(b, a)]

    def certificate(self, issuer: NodeId, subject: NodeId) -> Certificate | None:
        return self.certs.get((issuer, subject))

    def with_certificates(self, certs: Iterable[Certificate],
                          keys: Mapping[NodeId, PublicKey] = ()) -> "CertificateGraph":
        merged = dict(self.keys)
        merged.update(keys)
        return CertificateGraph.build(merged, [*self.certs.values(), *certs])

    def subgraph(self, vertices: Iterable[NodeId],
                 edges: Iterable[tuple[NodeId, NodeId]] | None = None) -> "CertificateGraph":
        vs = set(vertices)
        if edges is None:
            keep = {(a, b) for (a, b) in self.certs if a in vs and b in vs}
        else:
            keep = set()
            for a, b in edges:
                keep.add((a, b))
                keep.add((b, a))
        return CertificateGraph(
            {v: self.keys[v] for v in vs if v in self.keys},
            {d: c for d, c in self.certs.items() if d in keep})

    def edge_list(self) -> list[tuple[NodeId, NodeId]]:
        return sorted(self.edges())


def degree(g: CertificateGraph, v: NodeId) -> int:
    return len(g.neighbors(v))


@dataclass(frozen=True)
class KeyStore:
    owner: NodeId
    graph: CertificateGraph
    limit: int

    def __post_init__(self):
        if self.owner not in self.graph:
            raise ValueError("key store must contain its owner")
        if self.limit < 1:
            raise ValueError("limit must be positive")

    @classmethod
    def empty(cls, owner: NodeId, key: PublicKey, limit: int) -> "KeyStore":
        return cls(owner, CertificateGraph({owner: key}), limit)

    def ids(self) -> list[NodeId]:
        return sorted(self.graph.keys)

    def __len__(self) -> int:
        return len(self.graph)

    def __contains__(self, v: NodeId) -> bool:
        return v in self.graph

    def key_of(self, v: NodeId) -> PublicKey:
        return self.graph.keys[v]

    def certificates(self) -> list[Certificate]:
        return sorted(self.graph.certs.values(),
                      key=lambda c: (c.issuer, c.subject, c.issued_at))

    def fingerprint(self) -> frozenset:
        return frozenset((c.issuer, c.subject, c.issued_at)
                         for c in self.graph.certs.values()) | frozenset(self.graph.keys)


def merge_stores(a: KeyStore | CertificateGraph, b: KeyStore | CertificateGraph) -> CertificateGraph:
    """Union of both subgraphs; a duplicated certificate keeps its newest copy."""
    ga = a.graph if isinstance(a, KeyStore) else a
    gb = b.graph if isinstance(b, KeyStore) else b
    keys = {**gb.keys, **ga.keys}
    return CertificateGraph.build(keys, [*ga.certs.values(), *gb.certs.values()])


def find_certificate_chain(g: CertificateGraph, source: NodeId,
                           target: NodeId) -> list[NodeId] | None:
    """Shortest path by edge count, or None."""
    for v in (source, target):
        if v not in g:
            raise UnknownNode(v)
    if source == target:
        raise ValueError("chain endpoints must differ")
    adj = g.adjacency()
    prev: dict[NodeId, NodeId | None] = {source: None}
    queue = deque([source])
    while queue:
        cur = queue.popleft()
        for nxt in sorted(adj[cur]):
            if nxt in prev:
                continue
            prev[nxt] = cur
            if nxt == target:
                path = [target]
                while prev[path[-1]] is not None:
                    path.append(prev[path[-1]])
                return path[::-1]
            queue.append(nxt)
    return None


@dataclass(frozen=True)
class ChainCheck:
    ok: bool
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ok


def verify_chain(chain: list[NodeId], g: CertificateGraph, now: int,
                 source_key: PublicKey | None = None) -> ChainCheck:
    """Walk the chain from its first vertex: each certificate must verify under
    the key vouched for by the previous hop and must not be expired.

    ``source_key`` pins the first issuer's key; by default the graph's own
    entry for it is trusted.
    """
    if len(chain) < 2:
        return ChainCheck(False, "chain too short")
    if chain[0] not in g:
        return ChainCheck(False, "unknown source")
    trusted = source_key or g.keys[chain[0]]
    for issuer, subject in zip(chain, chain[1:]):
        cert = g.certificate(issuer, subject)
        if cert is None:
            return ChainCheck(False, f"missing certificate {issuer}->{subject}")
        if cert.expired(now):
            return ChainCheck(False, "expired")
        if not cert.verify(trusted):
            return ChainCheck(False, "bad signature")
        trusted = cert.subject_key
    return ChainCheck(True)


def update_keystore(own: KeyStore, other: KeyStore | CertificateGraph | None,
                    lim: int | None = None) -> KeyStore:
    """Rebuild ``own`` from the union of both stores.

    Starting from the owner alone, members are scanned in admission order; a
    member admits every not-yet-admitted union neighbour whose degree equals
    the largest degree among those candidates, together with the connecting
    edge, while the store holds fewer than ``lim`` vertices. Scans repeat until
    a full pass admits nothing. Equal degrees are visited in NodeId order.
    """
    lim = own.limit if lim is None else lim
    union = merge_stores(own, other) if other is not None else own.graph
    adj = union._adjacency
    deg = {v: len(n) for v, n in adj.items()}
    members = [own.owner]
    admitted = {own.owner}
    tree: list[tuple[NodeId, NodeId]] = []
    changed = True
    while changed and len(members) < lim:
        changed = False
        for i in members:  # grows while iterating
            candidates = sorted(j for j in adj[i] if j not in admitted)
            if not candidates:
                continue
            best = max(deg[j] for j in candidates)
            for j in candidates:
                if deg[j] == best and len(members) < lim:
                    members.append(j)
                    admitted.add(j)
                    tree.append((i, j))
                    changed = True
    return KeyStore(own.owner, union.subgraph(members, tree), lim)


def expire_unrenewed(g: CertificateGraph, now: int,
                     keep: Iterable[NodeId] = ()) -> CertificateGraph:
    """Drop expired certificates, then every vertex whose certificates have
    all expired. Vertices in ``keep`` (a store's owner, say) survive."""
    certs = {d: c for d, c in g.certs.items() if not c.expired(now)}
    if len(certs) == len(g.certs):
        return g
    touched = {v for d in g.certs for v in d}
    valid = {v for d in certs for v in d}
    dead = (touched - valid) - set(keep)
    return CertificateGraph({v: k for v, k in g.keys.items() if v not in dead},
                            certs)


def expire_store(store: KeyStore, now: int) -> KeyStore:
    g = expire_unrenewed(store.graph, now, keep=[store.owner])
    # vertices cut off from the owner are no longer reachable through the store
    adj = g.adjacency()
    seen = {store.owner}
    queue = deque([store.owner])
    while queue:
        for nxt in adj[queue.popleft()]:
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return KeyStore(store.owner, g.subgraph(seen), store.limit)


def admit_node(newcomer: NodeId, newcomer_key: PublicKey,
               sponsors: Iterable[Identity], now: int,
               threshold: int = DEFAULT_THRESHOLD,
               lifetime: int = DEFAULT_LIFETIME) -> list[Certificate]:
    """Collect sponsor-signed certificates for a newcomer.

    Raises InsufficientSponsors unless at least ``threshold`` distinct
    sponsors produce a certificate that verifies.
    """
    if threshold < 2:
        raise ValueError("admission needs at least two signatures")
    certs = []
    seen = set()
    for sponsor in sponsors:
        if sponsor.node_id in seen or sponsor.node_id == newcomer:
            continue
        cert = issue_certificate(sponsor, newcomer, newcomer_key, now, lifetime)
        if cert.verify(sponsor.public):
            certs.append(cert)
            seen.add(sponsor.node_id)
    if len(certs) < threshold:
        raise InsufficientSponsors(
            f"{len(certs)} valid signatures, {threshold} required")
    return certs


def certificate_to_dict(c: Certificate) -> dict:
    return {"issuer": c.issuer.hex(), "subject": c.subject.hex(),
            "e": c.subject_key.exponent, "n": c.subject_key.modulus,
            "sig": c.signature, "issued": c.issued_at, "expires": c.expires_at}


def certificate_from_dict(d: dict) -> Certificate:
    return Certificate(NodeId.fromhex(d["issuer"]), NodeId.fromhex(d["subject"]),
                       PublicKey(int(d["e"]), int(d["n"])), int(d["sig"]),
                       int(d["issued"]), int(d["expires"]))


def store_to_dict(store: KeyStore) -> dict:
    return {
        "owner": store.owner.hex(),
        "limit": store.limit,
        "keys": [[v.hex(), k.exponent, k.modulus]
                 for v, k in sorted(store.graph.keys.items())],
        "certs": [certificate_to_dict(c) for c in store.certificates()],
    }


def store_from_dict(d: dict) -> KeyStore:
    keys = {NodeId.fromhex(h): PublicKey(int(e), int(n)) for h, e, n in d["keys"]}
    certs = {}
    for raw in d["certs"]:
        c = certificate_from_dict(raw)
        certs[c.direction] = c
    return KeyStore(NodeId.fromhex(d["owner"]), CertificateGraph(keys, certs),
                    int(d["limit"]))
