"""Identity keys built from Hamiltonian cycles, plus the hashing, signing and
symmetric sealing primitives used by the rest of the package.

Key sizes here are illustrative. Textbook RSA without padding is used on
purpose so that small worked examples can be checked by hand; nothing in this
module is meant to protect real traffic.
"""
from __future__ import annotations

import hashlib
import math
import os
import random
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from typing import Iterable, Sequence

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

DIGEST_SIZE = 32
NONCE_SIZE = 12
KEYGEN_ATTEMPTS = 1000


class NotACycle(ValueError):
    """Bit pattern (or vertex sequence) is not a single spanning cycle."""


class ExhaustedRetries(RuntimeError):
    pass


class AuthFailure(ValueError):
    """Envelope did not authenticate under the given key."""


# -- cycle <-> integer -------------------------------------------------------

def pair_count(n: int) -> int:
    return n * (n - 1) // 2


def _bit_index(u: int, v: int, n: int) -> int:
    """Row-major position of pair (u, v), u < v, 1-based vertices."""
    return (u - 1) * n - (u - 1) * u // 2 + (v - u - 1)


@lru_cache(maxsize=None)
def pair_order(n: int) -> tuple[tuple[int, int], ...]:
    return tuple(combinations(range(1, n + 1), 2))


def cycle_edges(cycle: Sequence[int]) -> set[tuple[int, int]]:
    n = len(cycle)
    return {tuple(sorted((cycle[i], cycle[(i + 1) % n]))) for i in range(n)}


@lru_cache(maxsize=None)
def _pair_bits(n: int) -> dict[tuple[int, int], int]:
    width = pair_count(n)
    return {pair: 1 << (width - 1 - k) for k, pair in enumerate(pair_order(n))}


def edges_to_int(edges: Iterable[tuple[int, int]], n: int) -> int:
    bits = _pair_bits(n)
    value = 0
    for u, v in edges:
        value |= bits[(u, v) if u < v else (v, u)]
    return value


def int_to_edges(value: int, n: int) -> set[tuple[int, int]]:
    width = pair_count(n)
    if value < 0 or value >= 1 << width:
        raise ValueError(f"value does not fit in {width} bits")
    order = pair_order(n)
    edges = set()
    while value:
        low = value & -value
        edges.add(order[width - low.bit_length()])
        value ^= low
    return edges


def encode_cycle(cycle: Sequence[int]) -> int:
    """Integer whose set bits are the cycle's edges in the upper triangle of
    the adjacency matrix, read row by row, most significant bit first."""
    n = len(cycle)
    if n < 3:
        raise NotACycle("a Hamiltonian cycle needs at least 3 vertices")
    if sorted(cycle) != list(range(1, n + 1)):
        raise NotACycle(f"not a permutation of 1..{n}: {tuple(cycle)}")
    return edges_to_int(cycle_edges(cycle), n)


def canonical_cycle(cycle: Sequence[int]) -> tuple[int, ...]:
    """Rotate to start at vertex 1 and pick the direction with the smaller
    second vertex."""
    cycle = list(cycle)
    k = cycle.index(1)
    cycle = cycle[k:] + cycle[:k]
    if len(cycle) > 2 and cycle[-1] < cycle[1]:
        cycle = [cycle[0]] + cycle[:0:-1]
    return tuple(cycle)


def cycle_from_edges(edges: Iterable[tuple[int, int]], n: int) -> tuple[int, ...]:
    edges = set(edges)
    if len(edges) != n:
        raise NotACycle(f"expected {n} edges, got {len(edges)}")
    adj: dict[int, list[int]] = {v: [] for v in range(1, n + 1)}
    for u, v in edges:
        if u == v or u not in adj or v not in adj:
            raise NotACycle(f"bad edge {(u, v)}")
        adj[u].append(v)
        adj[v].append(u)
    for v, nbrs in adj.items():
        if len(nbrs) != 2:
            raise NotACycle(f"vertex {v} has degree {len(nbrs)}")
    walk = [1]
    prev, cur = None, 1
    while True:
        a, b = adj[cur]
        nxt = b if a == prev else a
        if nxt == 1:
            break
        walk.append(nxt)
        prev, cur = cur, nxt
    if len(walk) != n:
        raise NotACycle("edges split into disjoint subcycles")
    return canonical_cycle(walk)


def decode_cycle(value: int, n: int) -> tuple[int, ...]:
    return cycle_from_edges(int_to_edges(value, n), n)


def is_cycle_encoding(value: int, n: int) -> bool:
    try:
        decode_cycle(value, n)
    except (NotACycle, ValueError):
        return False
    return True


# -- identity keys -----------------------------------------------------------

@dataclass(frozen=True)
class PublicKey:
    exponent: int
    modulus: int


@dataclass(frozen=True)
class IdentityKeyPair:
    modulus: int
    public_exponent: int
    private_exponent: int
    n_vertices: int = 0

    @property
    def public(self) -> PublicKey:
        return PublicKey(self.public_exponent, self.modulus)

    @property
    def cycle(self) -> tuple[int, ...]:
        return decode_cycle(self.public_exponent, self.n_vertices)


def random_cycle(n: int, rng: random.Random) -> list[int]:
    cycle = list(range(1, n + 1))
    rng.shuffle(cycle)
    return cycle


def generate_keypair(p: int, q: int, n_vertices: int, rng: random.Random,
                     attempts: int = KEYGEN_ATTEMPTS) -> IdentityKeyPair:
    """Draw random Hamiltonian cycles until one encodes a valid public
    exponent for the modulus p*q."""
    if p == q:
        raise ValueError("p and q must differ")
    phi = (p - 1) * (q - 1)
    for _ in range(attempts):
        e = encode_cycle(random_cycle(n_vertices, rng))
        if e < phi and math.gcd(e, phi) == 1:
            return IdentityKeyPair(p * q, e, pow(e, -1, phi), n_vertices)
    raise ExhaustedRetries(
        f"no {n_vertices}-vertex cycle encoding below and coprime with {phi} "
        f"after {attempts} attempts")


def random_prime(bits: int, rng: random.Random) -> int:
    from sympy import nextprime

    return int(nextprime(rng.getrandbits(bits) | 1 << (bits - 1)))


def prime_bits_for(n_vertices: int) -> int:
    """Prime size that leaves room for any cycle encoding below phi."""
    return pair_count(n_vertices) // 2 + 4


def generate_identity_keys(n_vertices: int, rng: random.Random,
                           prime_bits: int | None = None) -> IdentityKeyPair:
    """Fresh primes until a cycle fits; few vertices give few encodings, and
    phi can share a factor with all of them."""
    bits = prime_bits or prime_bits_for(n_vertices)
    for _ in range(KEYGEN_ATTEMPTS):
        p = random_prime(bits, rng)
        q = random_prime(bits, rng)
        if p == q:
            continue
        try:
            return generate_keypair(p, q, n_vertices, rng)
        except ExhaustedRetries:
            continue
    raise ExhaustedRetries(f"no {bits}-bit prime pair admits a {n_vertices}-vertex cycle")


# -- hashing, ids ------------------------------------------------------------

def int_bytes(value: int) -> bytes:
    return value.to_bytes(max(1, (value.bit_length() + 7) // 8), "big")


class NodeId(bytes):
    """Fixed-width digest identifying a node; orders and hashes as bytes."""

    __slots__ = ()

    @property
    def digest(self) -> bytes:
        return bytes(self)

    @classmethod
    def fromhex(cls, text: str) -> "NodeId":
        raw = bytes.fromhex(text)
        if len(raw) != DIGEST_SIZE:
            raise ValueError(f"node id must be {DIGEST_SIZE} bytes")
        return cls(raw)

    def __repr__(self) -> str:
        return f"NodeId({self.hex()[:8]})"

    def __str__(self) -> str:
        return self.hex()[:8]


def node_id(seed: bytes | str) -> NodeId:
    if isinstance(seed, str):
        seed = seed.encode()
    return NodeId(hashlib.sha256(seed).digest())


def pseudonym_of(ids: Iterable[NodeId]) -> bytes:
    """Hash of the sorted ids; insensitive to enumeration order."""
    return hashlib.sha256(b"".join(sorted(ids))).digest()


def pseudonym(store) -> bytes:
    return pseudonym_of(store.ids())


def id_hash(nid: NodeId) -> bytes:
    return hashlib.sha256(b"id" + nid).digest()


# -- signatures --------------------------------------------------------------

def message_representative(message: bytes, modulus: int) -> int:
    return int.from_bytes(hashlib.sha256(message).digest(), "big") % modulus


def sign(message: bytes, key: IdentityKeyPair) -> int:
    return pow(message_representative(message, key.modulus),
               key.private_exponent, key.modulus)


def verify(message: bytes, signature: int, public: PublicKey) -> bool:
    try:
        if not 0 <= signature < public.modulus:
            return False
        return pow(signature, public.exponent, public.modulus) == \
            message_representative(message, public.modulus)
    except (TypeError, ValueError):
        return False


def rsa_encrypt(value: int, public: PublicKey) -> int:
    if not 0 <= value < public.modulus:
        raise ValueError("value out of range for modulus")
    return pow(value, public.exponent, public.modulus)


def rsa_decrypt(value: int, key: IdentityKeyPair) -> int:
    return pow(value, key.private_exponent, key.modulus)


# -- symmetric envelope ------------------------------------------------------

def derive_key(key_material: int | bytes) -> bytes:
    if isinstance(key_material, int):
        key_material = int_bytes(key_material)
    return hashlib.sha256(b"seal" + key_material).digest()


def symmetric_seal(key_material: int | bytes, plaintext: bytes,
                   nonce: bytes | None = None) -> bytes:
    """AES-GCM under a key hashed from ``key_material``; nonce is prefixed."""
    if nonce is None:
        nonce = os.urandom(NONCE_SIZE)
    if len(nonce) != NONCE_SIZE:
        raise ValueError(f"nonce must be {NONCE_SIZE} bytes")
    return nonce + AESGCM(derive_key(key_material)).encrypt(nonce, plaintext, None)


def symmetric_open(key_material: int | bytes, envelope: bytes) -> bytes:
    if len(envelope) < NONCE_SIZE + 16:
        raise AuthFailure("envelope too short")
    nonce, body = envelope[:NONCE_SIZE], envelope[NONCE_SIZE:]
    try:
        return AESGCM(derive_key(key_material)).decrypt(nonce, body, None)
    except InvalidTag:
        raise AuthFailure("envelope failed authentication") from None


def rng_nonce(rng: random.Random) -> bytes:
    return rng.getrandbits(NONCE_SIZE * 8).to_bytes(NONCE_SIZE, "big")
