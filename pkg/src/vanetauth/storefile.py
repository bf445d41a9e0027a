"""Text persistence for a node's key material and key store.

A file holds three comma-delimited tables, each introduced by a ``[name]``
line and a header row::

    [certificateStore]
    idcolumn,idA,idB,certAB,certBA,date
    [keyStore]
    idcolumn,idA,PseuA,module,publicKey,secretKey,degree
    [myStore]
    idcolumn,idA,PseuA,modulo,publicKey,privateKey,secretKey,degree

``certAB`` is the signature A issued over B's key and ``certBA`` the reverse.
``date`` holds ``issued:expires`` for certAB and certBA, separated by ``;``.
A one-sided edge leaves the missing signature and its date half empty.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from . import crypto
from .certgraph import Certificate, CertificateGraph, Identity, KeyStore
from .crypto import IdentityKeyPair, NodeId, PublicKey

COLUMNS = {
    "certificateStore": ["idcolumn", "idA", "idB", "certAB", "certBA", "date"],
    "keyStore": ["idcolumn", "idA", "PseuA", "module", "publicKey", "secretKey", "degree"],
    "myStore": ["idcolumn", "idA", "PseuA", "modulo", "publicKey", "privateKey",
                "secretKey", "degree"],
}
DEFAULT_LIMIT = 10


class StoreFormatError(ValueError):
    pass


@dataclass
class StoreFile:
    identity: Identity
    store: KeyStore
    pseudonyms: dict[NodeId, str] = field(default_factory=dict)
    secrets: dict[NodeId, int] = field(default_factory=dict)


def parse_tables(text: str) -> dict[str, list[dict[str, str]]]:
    tables: dict[str, list[dict[str, str]]] = {name: [] for name in COLUMNS}
    current = None
    header = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            if current not in COLUMNS:
                raise StoreFormatError(f"line {lineno}: unknown table {current!r}")
            header = None
            continue
        if current is None:
            raise StoreFormatError(f"line {lineno}: row outside any table")
        row = next(csv.reader([line]))
        if header is None:
            if row != COLUMNS[current]:
                raise StoreFormatError(f"line {lineno}: bad header for {current}: {row}")
            header = row
            continue
        if len(row) != len(header):
            raise StoreFormatError(
                f"line {lineno}: {current} row has {len(row)} fields, expected {len(header)}")
        tables[current].append(dict(zip(header, row)))
    return tables


def format_tables(tables: dict[str, list[dict]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for name, cols in COLUMNS.items():
        if name not in tables:
            continue
        buf.write(f"[{name}]\n")
        writer.writerow(cols)
        for row in tables.get(name, []):
            writer.writerow([row.get(c, "") for c in cols])
    return buf.getvalue()


def _opt_int(text: str) -> int | None:
    return int(text) if text.strip() else None


def _date_half(text: str) -> tuple[int, int] | None:
    if not text:
        return None
    issued, expires = text.split(":")
    return int(issued), int(expires)


def load_store(text: str, limit: int | None = None) -> StoreFile:
    try:
        return _load(parse_tables(text), limit)
    except StoreFormatError:
        raise
    except (ValueError, KeyError) as exc:
        raise StoreFormatError(str(exc)) from None


def _load(tables, limit) -> StoreFile:
    mine = tables["myStore"]
    if len(mine) != 1:
        raise StoreFormatError(f"expected exactly one myStore row, found {len(mine)}")
    me = mine[0]
    owner = NodeId.fromhex(me["idA"])
    keys = IdentityKeyPair(int(me["modulo"]), int(me["publicKey"]), int(me["privateKey"]))
    identity = Identity(owner, keys)
    vertex_keys = {owner: keys.public}
    pseudonyms, secrets = {}, {}
    for row in tables["keyStore"]:
        nid = NodeId.fromhex(row["idA"])
        vertex_keys[nid] = PublicKey(int(row["publicKey"]), int(row["module"]))
        if row["PseuA"]:
            pseudonyms[nid] = row["PseuA"]
        if _opt_int(row["secretKey"]) is not None:
            secrets[nid] = int(row["secretKey"])
    certs = {}
    for row in tables["certificateStore"]:
        a, b = NodeId.fromhex(row["idA"]), NodeId.fromhex(row["idB"])
        for issuer, subject in ((a, b), (b, a)):
            if subject not in vertex_keys:
                raise StoreFormatError(f"certificate subject {subject} has no key row")
        halves = (row["date"].split(";") + [""])[:2]
        for (issuer, subject), sig, half in (((a, b), row["certAB"], halves[0]),
                                             ((b, a), row["certBA"], halves[1])):
            dates = _date_half(half)
            if _opt_int(sig) is None or dates is None:
                continue
            certs[(issuer, subject)] = Certificate(issuer, subject, vertex_keys[subject],
                                                   int(sig), *dates)
    graph = CertificateGraph(vertex_keys, certs)
    _check_degrees(graph, owner, me, tables["keyStore"])
    probe = 2 % keys.modulus
    if pow(pow(probe, keys.private_exponent, keys.modulus), keys.public_exponent,
           keys.modulus) != probe:
        raise StoreFormatError("myStore private key does not match public key")
    lim = limit if limit is not None else max(DEFAULT_LIMIT, len(graph))
    return StoreFile(identity, KeyStore(owner, graph, lim), pseudonyms, secrets)


def _check_degrees(graph, owner, me, key_rows) -> None:
    # a cut-off file usually leaves a short or missing trailing field
    adj = graph.adjacency()
    rows = [(owner, me)] + [(NodeId.fromhex(r["idA"]), r) for r in key_rows]
    for nid, row in rows:
        if int(row["degree"]) != len(adj[nid]):
            raise StoreFormatError(
                f"degree of {nid} is {len(adj[nid])}, file says {row['degree']}")


def dump_store(sf: StoreFile) -> str:
    store, graph = sf.store, sf.store.graph
    adj = graph.adjacency()
    rows_cert = []
    pairs = sorted({tuple(sorted(d)) for d in graph.certs})
    for k, (a, b) in enumerate(pairs, 1):
        ab, ba = graph.certificate(a, b), graph.certificate(b, a)
        date = ";".join(f"{c.issued_at}:{c.expires_at}" if c else "" for c in (ab, ba))
        rows_cert.append({"idcolumn": k, "idA": a.hex(), "idB": b.hex(),
                          "certAB": ab.signature if ab else "",
                          "certBA": ba.signature if ba else "", "date": date})
    rows_keys = []
    others = [v for v in store.ids() if v != store.owner]
    for k, v in enumerate(others, 1):
        key = graph.keys[v]
        rows_keys.append({"idcolumn": k, "idA": v.hex(), "PseuA": sf.pseudonyms.get(v, ""),
                          "module": key.modulus, "publicKey": key.exponent,
                          "secretKey": sf.secrets.get(v, ""), "degree": len(adj[v])})
    keys = sf.identity.keys
    rows_me = [{"idcolumn": 1, "idA": store.owner.hex(),
                "PseuA": crypto.pseudonym(store).hex(), "modulo": keys.modulus,
                "publicKey": keys.public_exponent, "privateKey": keys.private_exponent,
                "secretKey": "", "degree": len(adj[store.owner])}]
    return format_tables({"certificateStore": rows_cert, "keyStore": rows_keys,
                          "myStore": rows_me})


def append_my_store_row(text: str, identity: Identity) -> str:
    """Add an identity row to the myStore table of ``text`` (which may be empty)."""
    tables = parse_tables(text) if text.strip() else {name: [] for name in COLUMNS}
    keys = identity.keys
    tables["myStore"].append({
        "idcolumn": len(tables["myStore"]) + 1, "idA": identity.node_id.hex(),
        "PseuA": crypto.pseudonym_of([identity.node_id]).hex(), "modulo": keys.modulus,
        "publicKey": keys.public_exponent, "privateKey": keys.private_exponent,
        "secretKey": "", "degree": 0})
    return format_tables(tables)
