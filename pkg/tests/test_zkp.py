import math
import random
from itertools import combinations, permutations

import pytest
from hypothesis import given, settings, strategies as st

from vanetauth import crypto, zkp
from vanetauth.zkp import (CycleInGI, GuessingCheater, Isomorphism, WitnessGraph,
                           build_witness_graph, degree_sequence, edge_set,
                           is_hamiltonian_cycle, key_to_cycle, permute_edges,
                           prover_commit, prover_respond, run_proof, verifier_challenge,
                           verifier_check)

from conftest import all_cycles


def hamiltonian_cycles(edges, n):
    return [c for c in all_cycles(n) if is_hamiltonian_cycle(c, edges, n)]


def complete(n):
    return frozenset(combinations(range(1, n + 1), 2))


def graph_from(edges, cycle):
    return WitnessGraph(len(cycle), edge_set(edges), tuple(cycle))


# -- witness graphs ------------------------------------------------------------

def test_density_zero_gives_bare_cycle():
    g = build_witness_graph(7, 3, 0.0, random.Random(0))
    assert g.edges == complete(3)
    assert not g.has_decoys()


def test_density_one_gives_complete_graph():
    g = build_witness_graph(45, 4, 1.0, random.Random(0))
    assert g.edges == complete(4)
    assert g.cycle == (1, 2, 3, 4)
    assert crypto.cycle_edges(g.cycle) <= g.edges


def test_half_density_adds_about_half_the_spare_pairs():
    extra = [len(build_witness_graph(45, 4, 0.5, random.Random(s)).edges) - 4
             for s in range(1000)]
    assert set(extra) <= {0, 1, 2}
    assert 0.9 <= sum(extra) / len(extra) <= 1.1


def test_bad_density_rejected():
    with pytest.raises(ValueError):
        build_witness_graph(45, 4, 1.5)


@settings(max_examples=200)
@given(st.integers(0, 2 ** 128), st.integers(3, 12))
def test_key_to_cycle_is_shared_and_valid(x, n):
    c = key_to_cycle(x, n)
    assert sorted(c) == list(range(1, n + 1))
    assert key_to_cycle(x, n) == c
    residue = x % (1 << crypto.pair_count(n))
    if crypto.is_cycle_encoding(residue, n):
        assert crypto.encode_cycle(c) == residue


def test_key_to_cycle_uses_low_bits_when_they_form_a_cycle():
    assert key_to_cycle(45, 4) == (1, 2, 3, 4)
    assert key_to_cycle(45 + (7 << 6), 4) == (1, 2, 3, 4)
    assert key_to_cycle(46, 4) == key_to_cycle(46, 4)


# -- commitments and responses -------------------------------------------------

@pytest.fixture(scope="module")
def g12():
    return build_witness_graph(123456789, 12, 0.5, random.Random(1))


def test_identity_commitment_is_the_graph(g12):
    c = prover_commit(g12, random.Random(0), permutation=zkp.identity_permutation(12))
    assert c.iso_graph == g12.edges
    resp = prover_respond(c, g12, 1)
    assert crypto.canonical_cycle(resp.cycle) == g12.cycle


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32))
def test_commitment_preserves_degrees(seed):
    g = build_witness_graph(seed, 9, 0.4, random.Random(seed))
    c = prover_commit(g, random.Random(seed))
    assert sorted(degree_sequence(c.iso_graph, 9)) == sorted(degree_sequence(g.edges, 9))
    assert permute_edges(g.edges, c.permutation) == c.iso_graph


def test_k4_minus_edge_commitments():
    edges = complete(4) - {(1, 3)}
    g = graph_from(edges, (1, 2, 3, 4))
    rng = random.Random(2)
    seen = set()
    for _ in range(100):
        iso = prover_commit(g, rng).iso_graph
        assert sorted(degree_sequence(iso, 4), reverse=True) == [3, 3, 2, 2]
        seen.add(iso)
    # K4 minus an edge has 6 labelled copies, one per missing pair
    assert len(seen) == 6


def test_challenges():
    a = [verifier_challenge(random.Random(5)) for _ in range(3)]
    assert a == [verifier_challenge(random.Random(5)) for _ in range(3)]
    rng = random.Random(6)
    bits = [verifier_challenge(rng) for _ in range(10000)]
    assert set(bits) == {0, 1}
    assert 0.47 <= sum(bits) / len(bits) <= 0.53
    r1, r2 = random.Random(7), random.Random(8)
    assert [verifier_challenge(r1) for _ in range(64)] != \
        [verifier_challenge(r2) for _ in range(64)]


def test_responses_verify(g12):
    rng = random.Random(3)
    for b in (0, 1):
        for _ in range(20):
            c = prover_commit(g12, rng)
            resp = prover_respond(c, g12, b)
            assert isinstance(resp, Isomorphism if b == 0 else CycleInGI)
            assert verifier_check(g12.public, c.iso_graph, b, resp, 12)
            if b == 0:
                assert permute_edges(g12.edges, resp.permutation) == c.iso_graph
            else:
                assert is_hamiltonian_cycle(resp.cycle, c.iso_graph, 12)


def test_verifier_rejects_bad_responses(g12):
    rng = random.Random(4)
    c = prover_commit(g12, rng)
    cyc = prover_respond(c, g12, 1)
    assert not verifier_check(g12.public, c.iso_graph, 1, CycleInGI(cyc.cycle[:-1]), 12)
    assert not verifier_check(g12.public, c.iso_graph, 1, CycleInGI(cyc.cycle[:-1] * 2), 12)
    perm = prover_respond(c, g12, 0).permutation
    # swapping two images moves at least one edge off the committed graph
    bad = None
    for i, j in combinations(range(12), 2):
        p = list(perm)
        p[i], p[j] = p[j], p[i]
        if permute_edges(g12.edges, p) != c.iso_graph:
            bad = tuple(p)
            break
    assert not verifier_check(g12.public, c.iso_graph, 0, Isomorphism(bad), 12)
    assert not verifier_check(g12.public, c.iso_graph, 0, Isomorphism(perm[:-1]), 12)
    assert not verifier_check(g12.public, c.iso_graph, 0, Isomorphism((1,) * 12), 12)
    # wrong variant for the challenge
    assert not verifier_check(g12.public, c.iso_graph, 0, cyc, 12)
    assert not verifier_check(g12.public, c.iso_graph, 1, Isomorphism(perm), 12)


# -- whole proofs --------------------------------------------------------------

def test_honest_prover_always_accepted(g12):
    rng = random.Random(9)
    for _ in range(200):
        assert run_proof(g12, g12.public, 12, 20, rng)


def test_run_proof_needs_a_round(g12):
    with pytest.raises(ValueError):
        run_proof(g12, g12.public, 12, 0)


def cheater_rate(rounds, trials, seed, n=6):
    g = build_witness_graph(seed, n, 0.5, random.Random(seed))
    rng, vrng = random.Random(seed + 1), random.Random(seed + 2)
    wins = 0
    for _ in range(trials):
        wins += run_proof(GuessingCheater(g.public, n, rng), g.public, n, rounds, vrng)
    return wins / trials


def test_cheater_single_round_about_half():
    assert abs(cheater_rate(1, 2000, 10) - 0.5) <= 0.03


def test_cheater_ten_rounds():
    p = 2.0 ** -10
    rate = cheater_rate(10, 100000, 20)
    assert abs(rate - p) <= 4 * math.sqrt(p * (1 - p) / 100000)


def test_no_round_reveals_both_permutation_and_cycle(g12):
    rng = random.Random(12)
    transcript = []
    for _ in range(50):
        run_proof(g12, g12.public, 12, 20, rng, transcript)
    assert len(transcript) == 1000
    for rec in transcript:
        assert isinstance(rec.response, (Isomorphism, CycleInGI))
        assert not (hasattr(rec.response, "permutation") and hasattr(rec.response, "cycle"))


def preimage_cycles(g_edges, iso_edges, revealed, n):
    """Cycles of G that some isomorphism G -> GI maps onto the revealed one."""
    out = set()
    target = crypto.cycle_edges(revealed)
    for perm in permutations(range(1, n + 1)):
        if permute_edges(g_edges, perm) != iso_edges:
            continue
        inv = {img: v for v, img in enumerate(perm, 1)}
        out.add(frozenset(tuple(sorted((inv[a], inv[b]))) for a, b in target))
    return out


@pytest.mark.parametrize("edges,cycle", [
    (complete(6), (1, 2, 3, 4, 5, 6)),
    # triangular prism: triangles 1-2-3 and 4-5-6 joined by 1-4, 2-5, 3-6
    ({(1, 2), (2, 3), (1, 3), (4, 5), (5, 6), (4, 6), (1, 4), (2, 5), (3, 6)},
     (1, 2, 3, 6, 5, 4)),
])
def test_revealed_cycle_does_not_pin_the_witness(edges, cycle):
    g = graph_from(edges, cycle)
    assert len(hamiltonian_cycles(g.edges, 6)) >= 2
    c = prover_commit(g, random.Random(13))
    resp = prover_respond(c, g, 1)
    candidates = preimage_cycles(g.edges, c.iso_graph, resp.cycle, 6)
    assert frozenset(crypto.cycle_edges(cycle)) in candidates
    assert len(candidates) >= 2


def test_rigid_graph_lets_verifier_undo_the_relabelling():
    # with no commitment step, a graph without symmetries is recoverable: the
    # single isomorphism G -> GI maps the revealed cycle straight back
    edges = {(1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (1, 6), (1, 3), (1, 4)}
    g = graph_from(edges, (1, 2, 3, 4, 5, 6))
    c = prover_commit(g, random.Random(14))
    resp = prover_respond(c, g, 1)
    candidates = preimage_cycles(g.edges, c.iso_graph, resp.cycle, 6)
    assert candidates == {frozenset(crypto.cycle_edges(g.cycle))}


@pytest.mark.parametrize("n", [7, 12])
def test_fresh_permutation_each_round(n):
    g = build_witness_graph(99, n, 0.5, random.Random(0))
    rng = random.Random(15)
    perms = {prover_commit(g, rng).permutation for _ in range(100)}
    assert len(perms) >= 95
