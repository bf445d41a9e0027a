"""Mobility simulation of contact-driven authentication and key-store growth.

Nodes start at random positions; every pair within range certifies each
other, which forms the first certificate graph. Nodes then move, and every
pair that comes into range runs the full handshake and, on success, updates
both key stores.
"""
from __future__ import annotations

import csv
import io
import json
import math
import random
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import crypto
from .certgraph import (DEFAULT_LIFETIME, DEFAULT_THRESHOLD, CertificateGraph,
                        Identity, InsufficientSponsors, KeyStore, admit_node,
                        expire_store, expire_unrenewed, issue_certificate,
                        update_keystore)
from .protocol import Node, SessionParams, handshake, updated_store

CSV_HEADER = ["nodes", "run", "total", "successful", "failed", "added_info", "ks_updates"]
METRIC_LABELS = [
    ("total_connections", "Total Connections"),
    ("successful_connections", "Successful Connections"),
    ("failed_connections", "Failed Connections"),
    ("added_information", "Added Information"),
    ("keystore_updates", "Key Store Updates"),
]


class ConfigError(ValueError):
    pass


@dataclass
class SimConfig:
    node_count: int = 15
    width: float | None = None
    height: float | None = None
    comm_range: float = 1.0
    speed_min: float = 0.0
    speed_max: float = 0.15
    duration: int = 30
    lim: int = 10
    runs: int = 25
    seed: int = 0
    mobility: str = "walk"
    rounds: int = 20
    n_vertices: int = 12
    decoy_density: float = 0.5
    cert_lifetime: int = DEFAULT_LIFETIME
    tick_seconds: int = 1
    join_rate: float = 0.0
    threshold: int = DEFAULT_THRESHOLD
    target_degree: float = 3.0
    connected_start: bool = True

    def area(self) -> tuple[float, float]:
        """Explicit size, or a square giving about ``target_degree`` neighbours
        per node if nodes were spread evenly."""
        if self.width is not None and self.height is not None:
            return self.width, self.height
        side = math.sqrt(max(self.node_count - 1, 1) * math.pi * self.comm_range ** 2
                         / self.target_degree)
        return self.width or side, self.height or side

    def validate(self) -> "SimConfig":
        w, h = self.area()
        positive = {"node_count": self.node_count, "width": w, "height": h,
                    "comm_range": self.comm_range, "lim": self.lim, "runs": self.runs,
                    "rounds": self.rounds, "cert_lifetime": self.cert_lifetime,
                    "tick_seconds": self.tick_seconds}
        for name, value in positive.items():
            if value is None or value <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.duration < 0:
            raise ConfigError("duration must be non-negative")
        if self.comm_range >= min(w, h):
            raise ConfigError("comm_range must be smaller than the area")
        if not 0 <= self.speed_min <= self.speed_max:
            raise ConfigError("need 0 <= speed_min <= speed_max")
        if self.mobility not in ("walk", "waypoint"):
            raise ConfigError(f"unknown mobility model {self.mobility!r}")
        if self.n_vertices < 3:
            raise ConfigError("n_vertices must be at least 3")
        if self.threshold < 2:
            raise ConfigError("threshold must be at least 2")
        return self

    def session_params(self) -> SessionParams:
        return SessionParams(rounds=self.rounds, n_vertices=self.n_vertices,
                             decoy_density=self.decoy_density)


@dataclass
class SimMetrics:
    total_connections: float = 0
    successful_connections: float = 0
    failed_connections: float = 0
    added_information: float = 0
    keystore_updates: float = 0

    def row(self) -> list:
        return [self.total_connections, self.successful_connections,
                self.failed_connections, self.added_information, self.keystore_updates]


@dataclass
class World:
    cfg: SimConfig
    rng: random.Random
    mob: np.random.Generator
    nodes: list[Node]
    pos: np.ndarray
    graph: CertificateGraph
    in_range: set = field(default_factory=set)
    tick: int = 0
    metrics: SimMetrics = field(default_factory=SimMetrics)
    targets: np.ndarray | None = None
    speeds: np.ndarray | None = None
    join_failures: int = 0
    saturated_at: int | None = None

    @property
    def now(self) -> int:
        return self.tick * self.cfg.tick_seconds

    def node_ids(self) -> list:
        return [n.node_id for n in self.nodes]


def _new_identity(cfg: SimConfig, rng: random.Random) -> Identity:
    nid = crypto.node_id(rng.getrandbits(128).to_bytes(16, "big"))
    return Identity(nid, crypto.generate_identity_keys(cfg.n_vertices, rng))


def _pairs_in_range(pos: np.ndarray, r: float) -> set[tuple[int, int]]:
    if len(pos) < 2:
        return set()
    diff = pos[:, None, :] - pos[None, :, :]
    close = np.triu((diff ** 2).sum(-1) <= r * r, 1)
    return {(int(i), int(j)) for i, j in np.argwhere(close)}


def _mutual_certs(a: Identity, b: Identity, now: int, lifetime: int):
    return [issue_certificate(a, b.node_id, b.public, now, lifetime),
            issue_certificate(b, a.node_id, a.public, now, lifetime)]


def _local_store(owner: Identity, graph: CertificateGraph, lim: int) -> KeyStore:
    adj = graph.adjacency()
    closed = {owner.node_id} | adj.get(owner.node_id, set())
    base = KeyStore.empty(owner.node_id, owner.public, lim)
    return update_keystore(base, graph.subgraph(closed), lim)


def init_world(cfg: SimConfig, rng: random.Random) -> World:
    w, h = cfg.area()
    identities = [_new_identity(cfg, rng) for _ in range(cfg.node_count)]
    mob = np.random.default_rng(rng.getrandbits(64))
    if cfg.connected_start:
        pos = _connected_placement(cfg.node_count, w, h, cfg.comm_range, mob)
    else:
        pos = mob.uniform((0.0, 0.0), (w, h), size=(cfg.node_count, 2))
    pairs = _pairs_in_range(pos, cfg.comm_range)
    certs = []
    for i, j in sorted(pairs):
        certs += _mutual_certs(identities[i], identities[j], 0, cfg.cert_lifetime)
    graph = CertificateGraph.build({ident.node_id: ident.public for ident in identities},
                                   certs)
    nodes = [Node(ident, _local_store(ident, graph, cfg.lim), _address(k))
             for k, ident in enumerate(identities)]
    world = World(cfg, rng, mob, nodes, pos, graph, in_range=pairs)
    if cfg.mobility == "waypoint":
        world.targets = mob.uniform((0.0, 0.0), (w, h), size=(cfg.node_count, 2))
        world.speeds = mob.uniform(cfg.speed_min, cfg.speed_max, size=cfg.node_count)
    _check_saturation(world)
    return world


def _connected_placement(n: int, w: float, h: float, r: float,
                         mob: np.random.Generator) -> np.ndarray:
    """Uniform positions, except that every node after the first is redrawn
    until it lands within range of one already placed."""
    pos = np.empty((n, 2))
    for k in range(n):
        while True:
            p = mob.uniform((0.0, 0.0), (w, h))
            if k == 0 or (((pos[:k] - p) ** 2).sum(1) <= r * r).any():
                pos[k] = p
                break
    return pos


def _address(k: int) -> str:
    return f"10.0.{k // 250}.{k % 250 + 1}"


def _reflect(values: np.ndarray, upper: float) -> np.ndarray:
    if upper <= 0:
        return np.zeros_like(values)
    period = 2 * upper
    v = np.mod(values, period)
    return np.where(v > upper, period - v, v)


def _move(world: World) -> None:
    cfg = world.cfg
    w, h = cfg.area()
    n = len(world.nodes)
    if n == 0:
        return
    if cfg.mobility == "walk":
        angle = world.mob.uniform(0, 2 * math.pi, n)
        dist = world.mob.uniform(cfg.speed_min, cfg.speed_max, n)
        step = np.stack([np.cos(angle), np.sin(angle)], axis=1) * dist[:, None]
        world.pos = world.pos + step
    else:
        delta = world.targets - world.pos
        gap = np.linalg.norm(delta, axis=1)
        arrived = gap <= world.speeds
        frac = np.where(arrived, 1.0, world.speeds / np.maximum(gap, 1e-12))
        world.pos = world.pos + delta * frac[:, None]
        k = int(arrived.sum())
        if k:
            world.targets[arrived] = world.mob.uniform((0.0, 0.0), (w, h), size=(k, 2))
            world.speeds[arrived] = world.mob.uniform(cfg.speed_min, cfg.speed_max, k)
    world.pos[:, 0] = _reflect(world.pos[:, 0], w)
    world.pos[:, 1] = _reflect(world.pos[:, 1], h)


def step(world: World) -> list[tuple[int, int]]:
    """Advance one tick; returns the contacts processed, in canonical order."""
    world.tick += 1
    _move(world)
    cfg = world.cfg
    if cfg.join_rate and world.rng.random() < cfg.join_rate:
        join_node(world, world.rng)
    if _next_expiry(world) <= world.now:
        drop_unrenewed(world, world.now)
    current = _pairs_in_range(world.pos, cfg.comm_range)
    contacts = sorted(current - world.in_range)
    world.in_range = current
    for pair in contacts:
        on_contact(world, pair)
    _check_saturation(world)
    return contacts


def _check_saturation(world: World) -> None:
    if world.saturated_at is not None or not world.nodes:
        return
    full = sum(len(n.store) >= world.cfg.lim for n in world.nodes)
    if full >= 0.9 * len(world.nodes):
        world.saturated_at = world.tick


def _next_expiry(world: World) -> int:
    return min((c.expires_at for c in world.graph.certs.values()), default=math.inf)


def on_contact(world: World, pair: tuple[int, int]) -> bool:
    """Authenticate a pair that just came into range; on success each side
    absorbs the other's store and the pair (re)certifies each other."""
    cfg = world.cfg
    i, j = pair
    a, b = world.nodes[i], world.nodes[j]
    m = world.metrics
    m.total_connections += 1
    rng_a = random.Random(world.rng.getrandbits(64))
    rng_b = random.Random(world.rng.getrandbits(64))
    result = handshake(a, b, rng_a, rng_b, cfg.session_params(), world.now)
    if not result.established:
        m.failed_connections += 1
        return False
    m.successful_connections += 1

    extra = []
    now = world.now
    existing = world.graph.certificate(a.node_id, b.node_id), \
        world.graph.certificate(b.node_id, a.node_id)
    if any(c is None or c.expires_at - now < cfg.cert_lifetime / 2 for c in existing):
        extra = _mutual_certs(a.identity, b.identity, now, cfg.cert_lifetime)
        world.graph = world.graph.with_certificates(extra)

    for node, session in ((a, result.a), (b, result.b)):
        old = node.store
        new = updated_store(session, cfg.lim, extra)
        before = {(c.issuer, c.subject, c.issued_at) for c in old.graph.certs.values()}
        after = {(c.issuer, c.subject, c.issued_at) for c in new.graph.certs.values()}
        m.added_information += len(after - before)
        if new.fingerprint() != old.fingerprint():
            m.keystore_updates += 1
            node.store = new
        node.peers[session.peer_id] = session.peer_key
    return True


def join_node(world: World, rng: random.Random) -> bool:
    """Place a newcomer at random; it joins only with enough sponsors in range."""
    cfg = world.cfg
    w, h = cfg.area()
    ident = _new_identity(cfg, rng)
    spot = world.mob.uniform((0.0, 0.0), (w, h), size=(1, 2))
    return _admit(world, ident, spot)


def _admit(world: World, ident: Identity, spot: np.ndarray) -> bool:
    cfg = world.cfg
    now = world.now
    if len(world.nodes):
        d = np.linalg.norm(world.pos - spot, axis=1)
        near = [k for k in np.argsort(d, kind="stable") if d[k] <= cfg.comm_range]
    else:
        near = []
    sponsors = [world.nodes[k].identity for k in near]
    try:
        sponsored = admit_node(ident.node_id, ident.public, sponsors, now,
                               cfg.threshold, cfg.cert_lifetime)
    except InsufficientSponsors:
        world.join_failures += 1
        return False
    back = [issue_certificate(ident, s.node_id, s.public, now, cfg.cert_lifetime)
            for s in sponsors]
    world.graph = world.graph.with_certificates(sponsored + back, {ident.node_id: ident.public})
    k_new = len(world.nodes)
    world.nodes.append(Node(ident, _local_store(ident, world.graph, cfg.lim), _address(k_new)))
    world.pos = np.vstack([world.pos, spot])
    if world.targets is not None:
        world.targets = np.vstack([world.targets, spot])
        world.speeds = np.append(world.speeds, cfg.speed_min)
    for k in near:
        world.in_range.add((int(k), k_new))
        sponsor = world.nodes[k]
        sponsor.store = update_keystore(sponsor.store, world.graph.subgraph(
            {sponsor.node_id, ident.node_id}), cfg.lim)
    return True


def drop_unrenewed(world: World, now: int) -> None:
    world.graph = expire_unrenewed(world.graph, now)
    for node in world.nodes:
        node.store = expire_store(node.store, now)


@dataclass
class RunResult:
    run: int
    metrics: SimMetrics
    saturated_at: int | None
    join_failures: int = 0


def run_once(cfg: SimConfig, run: int, check_invariants: bool = False,
             stop_when_saturated: bool = False) -> RunResult:
    rng = random.Random(f"{cfg.seed}:{run}")
    world = init_world(cfg, rng)
    for _ in range(cfg.duration):
        if stop_when_saturated and world.saturated_at is not None:
            break
        step(world)
        if check_invariants:
            m = world.metrics
            assert m.total_connections == m.successful_connections + m.failed_connections
            assert all(len(n.store) <= cfg.lim for n in world.nodes)
    return RunResult(run, world.metrics, world.saturated_at, world.join_failures)


def saturation_ticks(cfg: SimConfig, runs: int | None = None) -> list[int]:
    """Ticks until 90% of nodes hold ``lim`` keys, one value per run. A run
    that never gets there within ``duration`` counts as ``duration + 1``."""
    cfg.validate()
    out = []
    for k in range(cfg.runs if runs is None else runs):
        r = run_once(cfg, k, stop_when_saturated=True)
        out.append(cfg.duration + 1 if r.saturated_at is None else r.saturated_at)
    return out


@dataclass
class ExperimentResult:
    config: SimConfig
    runs: list[RunResult]

    @property
    def means(self) -> SimMetrics:
        if not self.runs:
            return SimMetrics()
        k = len(self.runs)
        return SimMetrics(*(sum(getattr(r.metrics, f.name) for r in self.runs) / k
                            for f in fields(SimMetrics)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in self.runs:
            writer.writerow([self.config.node_count, r.run,
                             *(int(v) for v in r.metrics.row())])
        return buf.getvalue()

    def summary(self) -> dict:
        return {"nodes": self.config.node_count, "runs": len(self.runs),
                "seed": self.config.seed, "means": asdict(self.means)}

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"


def run_experiment(cfg: SimConfig, check_invariants: bool = False) -> ExperimentResult:
    cfg.validate()
    return ExperimentResult(cfg, [run_once(cfg, k, check_invariants)
                                  for k in range(cfg.runs)])


def format_table(results: list[ExperimentResult]) -> str:
    head = [""] + [f"{r.config.node_count} nodes" for r in results]
    rows = [head]
    for attr, label in METRIC_LABELS:
        rows.append([label] + [f"{getattr(r.means, attr):.2f}" for r in results])
    widths = [max(len(row[c]) for row in rows) for c in range(len(head))]
    return "\n".join("  ".join(cell.rjust(widths[c]) if c else cell.ljust(widths[c])
                               for c, cell in enumerate(row)) for row in rows) + "\n"
