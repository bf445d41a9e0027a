"""Interactive proof of knowledge of a Hamiltonian cycle.

Each party turns the shared key into a cycle, hides it inside a graph with
decoy edges, publishes the graph, and then answers rounds of: permuted copy,
one-bit challenge, and either the permutation or the permuted cycle.

The permuted copy is published in the clear (no bit commitments), which is
weaker than the classical committed construction.
"""
from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Sequence, Union

from .crypto import (NotACycle, canonical_cycle, cycle_edges, decode_cycle,
                     int_bytes, pair_count)

Edge = tuple[int, int]
EdgeSet = frozenset

DEFAULT_ROUNDS = 20
DEFAULT_VERTICES = 12
DEFAULT_DENSITY = 0.5


def _norm(u: int, v: int) -> Edge:
    return (u, v) if u < v else (v, u)


def edge_set(edges: Iterable[Sequence[int]]) -> EdgeSet:
    return frozenset(_norm(u, v) for u, v in edges)


def degree_sequence(edges: Iterable[Edge], n: int) -> list[int]:
    deg = [0] * (n + 1)
    for u, v in edges:
        deg[u] += 1
        deg[v] += 1
    return sorted(deg[1:], reverse=True)


def key_to_cycle(x: int, n: int) -> tuple[int, ...]:
    """Map a shared key onto a Hamiltonian cycle that both holders derive
    identically: the low bits when they already form a cycle, otherwise a
    permutation seeded by hash(x, counter)."""
    try:
        return decode_cycle(x % (1 << pair_count(n)), n)
    except NotACycle:
        pass
    # any ordering of 1..n is a spanning cycle, so counter 0 always succeeds
    seed = hashlib.sha256(int_bytes(x) + (0).to_bytes(4, "big")).digest()
    order = list(range(1, n + 1))
    random.Random(seed).shuffle(order)
    return canonical_cycle(order)


@dataclass(frozen=True)
class WitnessGraph:
    vertex_count: int
    edges: EdgeSet
    cycle: tuple[int, ...]

    @property
    def public(self) -> EdgeSet:
        return self.edges

    def has_decoys(self) -> bool:
        return len(self.edges) > self.vertex_count


def build_witness_graph(x: int, n: int = DEFAULT_VERTICES,
                        decoy_density: float = DEFAULT_DENSITY,
                        rng: random.Random | None = None) -> WitnessGraph:
    if not 0.0 <= decoy_density <= 1.0:
        raise ValueError("decoy_density must lie in [0, 1]")
    rng = rng or random.Random()
    cycle = key_to_cycle(x, n)
    edges = set(cycle_edges(cycle))
    for pair in combinations(range(1, n + 1), 2):
        if pair not in edges and rng.random() < decoy_density:
            edges.add(pair)
    return WitnessGraph(n, frozenset(edges), cycle)


Permutation = tuple[int, ...]  # perm[v - 1] is the image of vertex v


def random_permutation(n: int, rng: random.Random) -> Permutation:
    images = list(range(1, n + 1))
    rng.shuffle(images)
    return tuple(images)


def identity_permutation(n: int) -> Permutation:
    return tuple(range(1, n + 1))


def permute_edges(edges: Iterable[Edge], perm: Permutation) -> EdgeSet:
    out = set()
    for u, v in edges:
        a, b = perm[u - 1], perm[v - 1]
        out.add((a, b) if a < b else (b, a))
    return frozenset(out)


@dataclass(frozen=True)
class RoundCommitment:
    iso_graph: EdgeSet
    permutation: Permutation


@dataclass(frozen=True)
class Isomorphism:
    permutation: Permutation


@dataclass(frozen=True)
class CycleInGI:
    cycle: tuple[int, ...]


RoundResponse = Union[Isomorphism, CycleInGI]


def prover_commit(g: WitnessGraph, rng: random.Random,
                  permutation: Permutation | None = None) -> RoundCommitment:
    perm = permutation or random_permutation(g.vertex_count, rng)
    return RoundCommitment(permute_edges(g.edges, perm), perm)


def verifier_challenge(rng: random.Random) -> int:
    return rng.getrandbits(1)


def prover_respond(commitment: RoundCommitment, g: WitnessGraph, b: int) -> RoundResponse:
    if b == 0:
        return Isomorphism(commitment.permutation)
    perm = commitment.permutation
    return CycleInGI(tuple(perm[v - 1] for v in g.cycle))


def is_hamiltonian_cycle(cycle: Sequence[int], edges: EdgeSet, n: int) -> bool:
    if len(cycle) != n or sorted(cycle) != list(range(1, n + 1)):
        return False
    return all(_norm(cycle[i], cycle[(i + 1) % n]) in edges for i in range(n))


def verifier_check(g_public: EdgeSet, iso_graph: EdgeSet, b: int,
                   resp: RoundResponse, n: int) -> bool:
    if b == 0:
        if not isinstance(resp, Isomorphism):
            return False
        perm = resp.permutation
        if len(perm) != n or sorted(perm) != list(range(1, n + 1)):
            return False
        return permute_edges(g_public, perm) == iso_graph
    if not isinstance(resp, CycleInGI):
        return False
    return is_hamiltonian_cycle(resp.cycle, iso_graph, n)


class HonestProver:
    def __init__(self, graph: WitnessGraph, rng: random.Random):
        self.graph = graph
        self.rng = rng
        self._commitment: RoundCommitment | None = None

    def commit(self) -> EdgeSet:
        self._commitment = prover_commit(self.graph, self.rng)
        return self._commitment.iso_graph

    def respond(self, b: int) -> RoundResponse:
        commitment, self._commitment = self._commitment, None
        if commitment is None:
            raise RuntimeError("respond called before commit")
        return prover_respond(commitment, self.graph, b)


class GuessingCheater:
    """Knows the public graph but not its cycle. Guesses the challenge each
    round and prepares only the answer for that guess: a relabelled copy of the
    real graph for 0, a bare cycle it made up for 1."""

    def __init__(self, g_public: EdgeSet, n: int, rng: random.Random):
        self.g_public = g_public
        self.n = n
        self.rng = rng
        self._guess = 0
        self._perm: Permutation = identity_permutation(n)
        self._fake: tuple[int, ...] = ()

    def commit(self) -> EdgeSet:
        self._guess = self.rng.getrandbits(1)
        self._perm = random_permutation(self.n, self.rng)
        if self._guess == 0:
            return permute_edges(self.g_public, self._perm)
        self._fake = tuple(self._perm)
        return frozenset(cycle_edges(self._fake))

    def respond(self, b: int) -> RoundResponse:
        if self._guess == 0:
            return Isomorphism(self._perm)
        return CycleInGI(self._fake)


@dataclass
class RoundTranscript:
    iso_graph: EdgeSet
    challenge: int
    response: RoundResponse
    accepted: bool


def run_proof(prover, g_public: EdgeSet, n: int, rounds: int = DEFAULT_ROUNDS,
              rng: random.Random | None = None,
              transcript: list[RoundTranscript] | None = None) -> bool:
    """Verifier side of ``rounds`` sequential rounds; stops at the first
    rejection. ``prover`` may be a WitnessGraph (an honest prover is built
    around it) or any object with commit()/respond(b)."""
    if rounds < 1:
        raise ValueError("rounds must be at least 1")
    rng = rng or random.Random()
    if isinstance(prover, WitnessGraph):
        prover = HonestProver(prover, rng)
    for _ in range(rounds):
        iso = prover.commit()
        b = verifier_challenge(rng)
        resp = prover.respond(b)
        ok = verifier_check(g_public, iso, b, resp, n)
        if transcript is not None:
            transcript.append(RoundTranscript(iso, b, resp, ok))
        if not ok:
            return False
    return True
