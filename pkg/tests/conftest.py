import random
from itertools import permutations

import pytest

from vanetauth import crypto
from vanetauth.certgraph import Identity, issue_certificate


def all_cycles(n):
    """Every Hamiltonian cycle on 1..n once: fix vertex 1 first and keep the
    direction whose second vertex is smaller than the last."""
    for rest in permutations(range(2, n + 1)):
        if n < 3 or rest[0] < rest[-1]:
            yield (1,) + rest


def matrix_encoding(cycle):
    """Independent encoder: fill a full adjacency matrix, then read the upper
    triangle row by row as a bit string."""
    n = len(cycle)
    m = [[0] * (n + 1) for _ in range(n + 1)]
    for i in range(n):
        u, v = cycle[i], cycle[(i + 1) % n]
        m[u][v] = m[v][u] = 1
    bits = "".join(str(m[i][j]) for i in range(1, n + 1) for j in range(i + 1, n + 1))
    return int(bits, 2)


def egcd_inverse(e, m):
    """Modular inverse by the extended Euclidean algorithm."""
    r0, r1, s0, s1 = m, e % m, 0, 1
    while r1:
        q = r0 // r1
        r0, r1 = r1, r0 - q * r1
        s0, s1 = s1, s0 - q * s1
    if r0 != 1:
        raise ValueError("not invertible")
    return s0 % m


_IDENTITIES = {}


def make_identity(label, n_vertices=8):
    key = (label, n_vertices)
    if key not in _IDENTITIES:
        rng = random.Random(f"identity:{label}:{n_vertices}")
        _IDENTITIES[key] = Identity(crypto.node_id(label),
                                    crypto.generate_identity_keys(n_vertices, rng))
    return _IDENTITIES[key]


def mutual(a, b, now=0, lifetime=None):
    kw = {} if lifetime is None else {"lifetime": lifetime}
    return [issue_certificate(a, b.node_id, b.public, now, **kw),
            issue_certificate(b, a.node_id, a.public, now, **kw)]


@pytest.fixture
def identities():
    return [make_identity(label) for label in "ABCDEFGH"]


_ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """Record a numbered acceptance criterion; the outcome is reported at the
    end of the session whether or not output capture is on."""
    def record(number, label):
        _ACCEPTANCE[number] = [label, "FAIL", request.node.nodeid]
        return _ACCEPTANCE[number]
    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call" and report.passed:
        for entry in _ACCEPTANCE.values():
            if entry[2] == item.nodeid:
                entry[1] = "PASS"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        label, status, _ = _ACCEPTANCE[number]
        terminalreporter.write_line(f"{status} criterion {number}: {label}")
