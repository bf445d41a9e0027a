"""Infrastructure-free mutual authentication for vehicular ad hoc networks:
cycle-derived identity keys, certificate graphs with bounded key stores, a
zero-knowledge handshake, and a mobility simulation."""

from .crypto import (AuthFailure, ExhaustedRetries, IdentityKeyPair, NodeId, NotACycle,
                     PublicKey, decode_cycle, encode_cycle, generate_keypair, node_id,
                     pseudonym, sign, symmetric_open, symmetric_seal, verify)
from .certgraph import (Certificate, CertificateGraph, Identity, KeyStore, admit_node,
                        find_certificate_chain, update_keystore, verify_chain)
from .zkp import GuessingCheater, HonestProver, build_witness_graph, run_proof
from .protocol import AuthSession, Failure, Node, Phase, SessionParams, handshake
from .sim import SimConfig, SimMetrics, run_experiment, run_once

__version__ = "0.1.0"
