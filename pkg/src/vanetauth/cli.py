"""Command line: key generation, a two-node handshake demo, batch simulation
and store-file tools.

Exit codes are 0 on success, 1 on bad input or usage, 2 when the handshake
itself fails.
"""
from __future__ import annotations

import argparse
import json
import os
import random
import sys
from pathlib import Path

from . import crypto, sim
from .certgraph import Identity, KeyStore, issue_certificate, update_keystore
from .protocol import Node, SessionParams, handshake
from .storefile import (StoreFile, StoreFormatError, append_my_store_row, dump_store,
                        load_store, parse_tables, format_tables, COLUMNS)

SEED_ENV = "VANETAUTH_SEED"
EXIT_OK, EXIT_INPUT, EXIT_FAILED = 0, 1, 2


class InputError(Exception):
    pass


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw:
        try:
            return int(raw)
        except ValueError:
            raise InputError(f"{SEED_ENV} must be an integer, got {raw!r}") from None
    seed = random.SystemRandom().randrange(2 ** 32)
    print(f"seed: {seed}", file=sys.stderr)
    return seed


def _seed(args) -> int:
    return args.seed if args.seed is not None else default_seed()


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def _load(path: str, limit=None) -> StoreFile:
    try:
        return load_store(_read(path), limit)
    except StoreFormatError as exc:
        raise InputError(f"{path}: {exc}") from None


# -- keygen ------------------------------------------------------------------

def cmd_keygen(args) -> int:
    rng = random.Random(_seed(args))
    if (args.p is None) != (args.q is None):
        raise InputError("give both --p and --q, or neither")
    if args.vertices < 3:
        raise InputError("--vertices must be at least 3")
    try:
        if args.p is not None:
            from sympy import isprime

            for name, v in (("p", args.p), ("q", args.q)):
                if not isprime(v):
                    raise InputError(f"--{name} {v} is not prime")
            keys = crypto.generate_keypair(args.p, args.q, args.vertices, rng)
        else:
            keys = crypto.generate_identity_keys(args.vertices, rng, args.bits)
    except crypto.ExhaustedRetries as exc:
        print(f"ExhaustedRetries: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        raise InputError(str(exc)) from None
    label = args.id if args.id is not None else f"node-{rng.getrandbits(64):016x}"
    ident = Identity(crypto.node_id(label), keys)
    print(f"id={ident.node_id.hex()}")
    print(f"n={keys.modulus}")
    print(f"e={keys.public_exponent}")
    print(f"d={keys.private_exponent}")
    print("cycle=" + "-".join(map(str, keys.cycle)))
    if args.store:
        path = Path(args.store)
        text = path.read_text() if path.exists() else ""
        try:
            path.write_text(append_my_store_row(text, ident))
        except StoreFormatError as exc:
            raise InputError(f"{path}: {exc}") from None
    return EXIT_OK


# -- demo --------------------------------------------------------------------

def demo_stores(seed: int, shared: bool = True, n_vertices: int = 8,
                lim: int = 10) -> tuple[StoreFile, StoreFile]:
    """Two small stores. With ``shared`` both hold a certificate edge to one
    common node; otherwise each knows only a private partner."""
    rng = random.Random(f"stores:{seed}")

    def ident(label):
        return Identity(crypto.node_id(f"{label}-{seed}"),
                        crypto.generate_identity_keys(n_vertices, rng))

    a, b, c = ident("a"), ident("b"), ident("c")
    partner_b = c if shared else ident("d")
    out = []
    for me, partner in ((a, c), (b, partner_b)):
        certs = [issue_certificate(me, partner.node_id, partner.public, 0),
                 issue_certificate(partner, me.node_id, me.public, 0)]
        store = KeyStore.empty(me.node_id, me.public, lim)
        graph = store.graph.with_certificates(certs, {partner.node_id: partner.public})
        out.append(StoreFile(me, KeyStore(me.node_id, graph, lim)))
    return out[0], out[1]


def cmd_demo(args) -> int:
    seed = _seed(args)
    if bool(args.store_a) != bool(args.store_b):
        raise InputError("give both store files or neither")
    if args.store_a:
        sa, sb = _load(args.store_a), _load(args.store_b)
    else:
        sa, sb = demo_stores(seed, shared=not args.disjoint, n_vertices=args.vertices)
    if args.rounds < 1:
        raise InputError("--rounds must be positive")
    params = SessionParams(rounds=args.rounds, n_vertices=args.vertices)
    now = args.now
    if now is None:
        issued = [c.issued_at for s in (sa, sb) for c in s.store.certificates()]
        now = max(issued, default=0)
    node_a = Node(sa.identity, sa.store, "10.0.0.1")
    node_b = Node(sb.identity, sb.store, "10.0.0.2")
    print(f"A {node_a.node_id.hex()[:16]} store={len(sa.store)}")
    print(f"B {node_b.node_id.hex()[:16]} store={len(sb.store)}")
    print(f"rounds={args.rounds} vertices={args.vertices} now={now}")
    print("direction,phase,kind,size,digest")
    result = handshake(node_a, node_b, random.Random(f"{seed}:A"),
                       random.Random(f"{seed}:B"), params, now)
    for rec in result.log:
        print(rec.to_line())
    print(f"messages={len(result.log)} bytes={sum(r.size for r in result.log)}")
    if not result.established:
        print(f"result: Failed {result.failure.value}")
        return EXIT_FAILED
    probe = b"demo payload"
    ok = (result.b.open(result.a.seal(probe)) == probe
          and result.a.open(result.b.seal(probe)) == probe)
    print(f"sealed exchange: {'ok' if ok else 'mismatch'}")
    print("result: Established")
    return EXIT_OK if ok else EXIT_FAILED


# -- simulate ----------------------------------------------------------------

def cmd_simulate(args) -> int:
    seed = _seed(args)
    results = []
    for n in args.nodes:
        cfg = sim.SimConfig(node_count=n, runs=args.runs, seed=seed, duration=args.duration,
                            lim=args.lim, speed_min=args.speed_min,
                            speed_max=args.speed_max, mobility=args.mobility,
                            rounds=args.rounds, n_vertices=args.vertices,
                            width=args.width, height=args.height,
                            comm_range=args.range, join_rate=args.join_rate)
        try:
            cfg.validate()
        except sim.ConfigError as exc:
            raise InputError(str(exc)) from None
        results.append(sim.run_experiment(cfg))
    csv_text = "".join(r.to_csv() if k == 0 else r.to_csv().split("\n", 1)[1]
                       for k, r in enumerate(results))
    Path(args.csv).write_text(csv_text)
    summary = {"seed": seed, "experiments": [r.summary() for r in results]}
    Path(args.json).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    sys.stdout.write(sim.format_table(results))
    return EXIT_OK


# -- stores ------------------------------------------------------------------

def cmd_stores(args) -> int:
    if args.action == "inspect":
        try:
            tables = parse_tables(_read(args.file))
        except StoreFormatError as exc:
            raise InputError(f"{args.file}: {exc}") from None
        names = [args.table] if args.table else list(COLUMNS)
        text = format_tables({name: tables[name] for name in names})
        if args.table:
            text = "\n".join(line for line in text.splitlines()
                             if not line.startswith("[")) + "\n"
        sys.stdout.write(text)
    elif args.action == "merge":
        if args.lim < 1:
            raise InputError("--lim must be positive")
        a, b = _load(args.file, args.lim), _load(args.other)
        merged = update_keystore(a.store, b.store, args.lim)
        out = StoreFile(a.identity, KeyStore(merged.owner, merged.graph, args.lim),
                        a.pseudonyms, a.secrets)
        _emit(dump_store(out), args.out)
    elif args.action == "generate":
        sa, sb = demo_stores(_seed(args), shared=not args.disjoint,
                             n_vertices=args.vertices)
        outdir = Path(args.out_dir)
        outdir.mkdir(parents=True, exist_ok=True)
        for name, s in (("a.store", sa), ("b.store", sb)):
            (outdir / name).write_text(dump_store(s))
            print(outdir / name)
    return EXIT_OK


def _emit(text: str, path) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vanetauth", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    seed_help = f"random seed (default: ${SEED_ENV}, else entropy)"

    p = sub.add_parser("keygen", help="generate an identity key pair")
    p.add_argument("--p", type=int)
    p.add_argument("--q", type=int)
    p.add_argument("--bits", type=int, help="prime size when --p/--q are not given")
    p.add_argument("--vertices", type=int, default=12)
    p.add_argument("--id", help="identity seed such as a phone number")
    p.add_argument("--store", help="append the identity to this myStore file")
    p.add_argument("--seed", type=int, help=seed_help)
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("demo", help="authenticate two nodes in process")
    p.add_argument("store_a", nargs="?")
    p.add_argument("store_b", nargs="?")
    p.add_argument("--rounds", type=int, default=20)
    p.add_argument("--vertices", type=int, default=8)
    p.add_argument("--now", type=int, help="clock for certificate checks")
    p.add_argument("--disjoint", action="store_true",
                   help="generated stores share no node")
    p.add_argument("--seed", type=int, help=seed_help)
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("simulate", help="run the mobility experiment")
    p.add_argument("--nodes", type=int, nargs="+", default=[15])
    p.add_argument("--runs", type=int, default=25)
    p.add_argument("--duration", type=int, default=30)
    p.add_argument("--lim", type=int, default=10)
    p.add_argument("--speed-min", type=float, default=0.0)
    p.add_argument("--speed-max", type=float, default=0.15)
    p.add_argument("--mobility", choices=["walk", "waypoint"], default="walk")
    p.add_argument("--rounds", type=int, default=20)
    p.add_argument("--vertices", type=int, default=12)
    p.add_argument("--width", type=float)
    p.add_argument("--height", type=float)
    p.add_argument("--range", type=float, default=1.0)
    p.add_argument("--join-rate", type=float, default=0.0)
    p.add_argument("--csv", default="simulation.csv")
    p.add_argument("--json", default="simulation.json")
    p.add_argument("--seed", type=int, help=seed_help)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("stores", help="inspect, merge or generate store files")
    acts = p.add_subparsers(dest="action", required=True)
    q = acts.add_parser("inspect")
    q.add_argument("file")
    q.add_argument("--table", choices=list(COLUMNS))
    q = acts.add_parser("merge", help="update FILE's store from OTHER")
    q.add_argument("file")
    q.add_argument("other")
    q.add_argument("--lim", type=int, required=True)
    q.add_argument("--out")
    q = acts.add_parser("generate", help="write two demo store files")
    q.add_argument("--out-dir", default=".")
    q.add_argument("--disjoint", action="store_true")
    q.add_argument("--vertices", type=int, default=8)
    q.add_argument("--seed", type=int, help=seed_help)
    p.set_defaults(func=cmd_stores)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
