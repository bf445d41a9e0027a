import random
import time

import pytest
from hypothesis import given, settings, strategies as st

from vanetauth import crypto
from vanetauth.certgraph import DAY, CertificateGraph, KeyStore
from vanetauth.protocol import (Beacon, DiscoveryOffer, Failure, Kind, MalformedBeacon,
                                MalformedMessage, Message, Node, Phase, SessionParams,
                                AuthSession, decode_beacon, decode_message,
                                discovery_match, encode_beacon, encode_message, handshake,
                                link_beacon, refresh_pseudonym, select_common_key,
                                session_advance, updated_store)

from conftest import make_identity, mutual

PARAMS = SessionParams(rounds=8, n_vertices=8)


def store_of(owner, partners, lim=10, now=0, lifetime=30 * DAY):
    certs = [c for p in partners for c in mutual(owner, p, now, lifetime)]
    g = CertificateGraph.build({owner.node_id: owner.public}, certs)
    return KeyStore(owner.node_id, g, lim)


@pytest.fixture
def trio():
    return make_identity("A"), make_identity("B"), make_identity("C")


@pytest.fixture
def pair(trio):
    a, b, c = trio
    return (Node(a, store_of(a, [c]), "10.0.0.1"), Node(b, store_of(b, [c]), "10.0.0.2"))


def run(pair, seed=0, params=PARAMS, now=0):
    na, nb = pair
    return handshake(na, nb, random.Random(f"{seed}a"), random.Random(f"{seed}b"), params, now)


# -- beacons ---------------------------------------------------------------------

@settings(max_examples=50)
@given(st.text("0123456789abcdef.:", min_size=1, max_size=20), st.binary(min_size=1, max_size=40),
       st.binary(min_size=8, max_size=80))
def test_beacon_round_trip(addr, pseu, blob):
    b = Beacon(addr, pseu, blob)
    assert decode_beacon(encode_beacon(b)) == b


def test_beacon_text_layout(trio):
    a = trio[0]
    node = Node(a, store_of(a, []), "10.0.0.5")
    b = node.beacon(100, random.Random(0))
    text = encode_beacon(b).decode()
    tag, addr, pseu, blob = text.split(",")
    assert (tag, addr, pseu) == ("01", "10.0.0.5", node.pseudonym.hex())
    assert bytes.fromhex(blob) == b.signed_identity
    assert decode_beacon(text).timestamp == 100


@pytest.mark.parametrize("text", ["02,10.0.0.5,ab,0011223344556677",
                                  "01,10.0.0.5,ab", "01,a,b,c,d",
                                  "01,10.0.0.5,zz,0011223344556677", "01,x,ab,00"])
def test_malformed_beacons(text):
    with pytest.raises(MalformedBeacon):
        decode_beacon(text)


def test_beacons_link_only_for_key_holders(trio):
    a, b, c = trio
    node = Node(a, store_of(a, [c]))
    rng = random.Random(1)
    first = node.beacon(10, rng)
    assert link_beacon(first, {a.node_id: a.public}) == a.node_id
    assert link_beacon(first, {b.node_id: b.public, c.node_id: c.public}) is None
    # pseudonym rotates with the store, yet key holders still recognise the node
    node.store = store_of(a, [c, b])
    second = refresh_pseudonym(node, 5, rng)
    assert second.pseudonym != first.pseudonym
    assert second.timestamp > first.timestamp
    assert link_beacon(second, {a.node_id: a.public}) == a.node_id
    blob = bytearray(second.signed_identity)
    blob[-1] ^= 1
    forged = Beacon(second.address, second.pseudonym, bytes(blob))
    assert link_beacon(forged, {a.node_id: a.public}) is None


def test_pseudonym_stable_without_store_change(trio):
    a, _, c = trio
    node = Node(a, store_of(a, [c]))
    rng = random.Random(2)
    assert node.beacon(1, rng).pseudonym == node.beacon(2, rng).pseudonym


# -- discovery ---------------------------------------------------------------------

def test_discovery_match_cases(trio):
    a, b, c = trio
    d = make_identity("D")
    sa, sb = store_of(a, [c, d]), store_of(b, [c])
    assert discovery_match(DiscoveryOffer.from_store(sa), sa) == set(sa.ids())
    assert discovery_match(DiscoveryOffer.from_store(sa), sb) == {c.node_id}
    lonely = store_of(make_identity("E"), [])
    assert discovery_match(DiscoveryOffer.from_store(sa), lonely) == set()


def test_common_key_agreement(trio):
    a, b, c = trio
    d = make_identity("D")
    sa, sb = store_of(a, [c, d]), store_of(b, [c, d])
    ma = discovery_match(DiscoveryOffer.from_store(sb), sa)
    mb = discovery_match(DiscoveryOffer.from_store(sa), sb)
    assert ma == mb == {c.node_id, d.node_id}
    smaller = min(c, d, key=lambda i: i.node_id)
    assert select_common_key(ma, sa) == select_common_key(mb, sb) == smaller.public.exponent
    assert select_common_key({c.node_id}, sa) == c.public.exponent
    with pytest.raises(ValueError):
        select_common_key(set(), sa)


def test_offer_carries_hashes_not_ids(trio):
    a, _, c = trio
    offer = DiscoveryOffer.from_store(store_of(a, [c]))
    raw = b"".join(offer.id_hashes)
    assert a.node_id not in raw and c.node_id not in raw


# -- wire records ------------------------------------------------------------------

def test_message_round_trip_and_malformed():
    m = Message(Kind.Z2, {"b": 1})
    assert decode_message(encode_message(m)) == m
    raw = encode_message(m)
    for bad in (raw[:3], raw[:-1], raw + b"x", bytes([42]) + raw[1:], raw[:5] + b"{" * (len(raw) - 5)):
        with pytest.raises(MalformedMessage):
            decode_message(bad)


# -- full handshake ------------------------------------------------------------------

def test_honest_handshake(pair):
    t0 = time.perf_counter()
    res = run(pair)
    elapsed = time.perf_counter() - t0
    assert res.established and res.failure is None
    a, b = res.a, res.b
    assert a.peer_key == pair[1].identity.public and b.peer_key == pair[0].identity.public
    assert a.peer_temporal == b.own_temporal and b.peer_temporal == a.own_temporal
    assert a.peer_store.owner == b.store.owner and b.peer_store.owner == a.store.owner
    assert a.session_key == b.session_key
    assert b.open(a.seal(b"hello")) == b"hello"
    assert a.open(b.seal(b"")) == b""
    merged = updated_store(a)
    assert set(merged.ids()) == set(a.store.ids()) | set(b.store.ids())
    assert elapsed < 1.0


def test_handshake_message_sequence(pair):
    res = run(pair)
    kinds = [r.kind for r in res.log]
    r = PARAMS.rounds
    assert kinds.count("D1") == kinds.count("D2") == 2
    assert kinds.count("Z1") == kinds.count("Z2") == kinds.count("Z3") == 2 * r
    assert kinds.count("E1") == kinds.count("E2") == kinds.count("E3") == 2
    phases = "".join(rec.phase for rec in res.log)
    assert phases == "".join(sorted(phases, key="DZE".index))
    for direction in ("A->B", "B->A"):
        sent = [rec.kind for rec in res.log if rec.direction == direction]
        assert sent.count("Z1") == sent.count("Z2") == sent.count("Z3") == r


def test_transcript_leaks_no_secrets(pair):
    res = run(pair, seed=3)
    wire = b"".join(res.wire)
    secrets = set(res.a.secrets() + res.b.secrets())
    assert len(secrets) >= 4
    for v in secrets:
        raw = crypto.int_bytes(v)
        for form in (raw, str(v).encode(), format(v, "x").encode(), raw.hex().encode()):
            assert form not in wire, v


def test_disjoint_stores_fail_after_discovery(trio):
    a, b, c = trio
    d = make_identity("D")
    res = run((Node(a, store_of(a, [c])), Node(b, store_of(b, [d]))))
    assert res.a.failure is Failure.NO_COMMON_KEY and res.b.failure is Failure.NO_COMMON_KEY
    assert [r.kind for r in res.log] == ["D1", "D1"]


def test_z_message_during_discovery(pair):
    s = AuthSession(pair[0], True, random.Random(0), PARAMS)
    s.start()
    s, out = session_advance(s, Message(Kind.Z1, {"gi": "0"}))
    assert s.phase is Phase.FAILED and s.failure is Failure.PHASE_VIOLATION
    assert out and out[0].kind is Kind.ABORT
    assert s.receive(Message(Kind.D1, {"ids": []})) == []


def test_timeout(pair):
    s = AuthSession(pair[0], True, random.Random(0), PARAMS, now=0)
    s.start()
    s.tick(5)
    assert s.phase is Phase.DISCOVERY
    s.tick(11)
    assert s.failure is Failure.TIMEOUT


def test_peer_abort_and_malformed(pair):
    s = AuthSession(pair[0], True, random.Random(0), PARAMS)
    s.receive(Message(Kind.ABORT, {"reason": "x"}))
    assert s.failure is Failure.PEER_ABORT
    s = AuthSession(pair[0], True, random.Random(0), PARAMS)
    s.receive(Message(Kind.D1, {"ids": ["not hex"]}))
    assert s.failure is Failure.MALFORMED


def drive(pair, tamper, seed=0, params=PARAMS):
    """Relay between two sessions, letting ``tamper`` rewrite each record."""
    na, nb = pair
    a = AuthSession(na, True, random.Random(f"{seed}a"), params)
    b = AuthSession(nb, False, random.Random(f"{seed}b"), params)
    queue = [(b, m) for m in a.start()] + [(a, m) for m in b.start()]
    while queue:
        dest, msg = queue.pop(0)
        msg = tamper(msg)
        src = a if dest is b else b
        queue += [(src, m) for m in dest.receive(decode_message(encode_message(msg)))]
    return a, b


def test_drive_without_tampering(pair):
    a, b = drive(pair, lambda m: m)
    assert a.phase is b.phase is Phase.ESTABLISHED


def test_tampered_response_rejected(pair):
    def flip(m):
        if m.kind is Kind.Z3 and "perm" in m.body:
            p = list(m.body["perm"])
            p[0], p[1] = p[1], p[0]
            return Message(m.kind, {"perm": p})
        if m.kind is Kind.Z3:
            return Message(m.kind, {"cycle": m.body["cycle"][:-1]})
        return m
    a, b = drive(pair, flip)
    assert Failure.PROOF_REJECTED in (a.failure, b.failure)
    assert Phase.ESTABLISHED not in (a.phase, b.phase)


def test_tampered_store_envelope(pair):
    def flip(m):
        if m.kind is Kind.E3:
            raw = bytearray(bytes.fromhex(m.body["sealed"]))
            raw[-1] ^= 1
            return Message(m.kind, {"sealed": raw.hex()})
        return m
    a, b = drive(pair, flip)
    assert Failure.UNSEAL_FAILURE in (a.failure, b.failure)


def test_graph_without_common_cycle_rejected(pair):
    def swap(m):
        if m.kind is Kind.D2:
            return Message(m.kind, {"n": m.body["n"], "edges": "1"})
        return m
    a, b = drive(pair, swap)
    assert Failure.PROOF_REJECTED in (a.failure, b.failure)


def test_expired_chain_rejected(trio):
    a, b, c = trio
    pair = (Node(a, store_of(a, [c], lifetime=DAY)), Node(b, store_of(b, [c], lifetime=DAY)))
    assert run(pair, now=DAY - 1).established
    res = run(pair, now=DAY)
    assert res.failure is Failure.CHAIN_INVALID


def test_cheater_without_key_cannot_pass(trio):
    # M knows C's identity but not its key: C is absent from M's store, so M
    # has to bluff D2 with a graph of its own choosing
    a, _, c = trio
    m = make_identity("M")
    pair = (Node(a, store_of(a, [c])), Node(m, store_of(m, [])))
    res = run(pair)
    assert not res.established


PHASE_RANK = {Phase.DISCOVERY: 0, Phase.AWAIT_GRAPH: 1, Phase.PROOF_VERIFY: 2,
              Phase.PROOF_PROVE: 2, Phase.EXCHANGE: 3, Phase.ESTABLISHED: 4}


@pytest.fixture(scope="module")
def recorded():
    a, b, c = (make_identity(x) for x in "ABC")
    na, nb = Node(a, store_of(a, [c]), "10.0.0.1"), Node(b, store_of(b, [c]), "10.0.0.2")
    res = handshake(na, nb, random.Random("fa"), random.Random("fb"), PARAMS)
    assert res.established
    to_b = [decode_message(w) for w, rec in zip(res.wire, res.log) if rec.direction == "A->B"]
    return na, nb, res.b.initiator, to_b


@settings(max_examples=200, deadline=None)
@given(st.randoms(use_true_random=False))
def test_fuzzed_order_never_skips_a_phase(recorded, rnd):
    na, nb, b_initiator, to_b = recorded
    msgs = list(to_b)
    k = rnd.randrange(len(msgs))
    j = rnd.randrange(len(msgs))
    msgs[k], msgs[j] = msgs[j], msgs[k]
    if rnd.random() < 0.3:
        rnd.shuffle(msgs)
    s = AuthSession(nb, b_initiator, random.Random("fb"), PARAMS)
    s.start()
    rank = 0
    for m in msgs:
        s.receive(m)
        if s.phase is Phase.FAILED:
            break
        new = PHASE_RANK[s.phase]
        assert rank <= new <= rank + 1
        rank = new
    if msgs != to_b:
        assert s.phase is not Phase.ESTABLISHED or [m.kind for m in msgs] == \
            [m.kind for m in to_b]
