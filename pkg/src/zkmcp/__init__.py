"""Zero-knowledge audits of agent message traffic.

Agents record the messages of a session, prove afterwards that the per-type
counts and the Poseidon digests they report match those messages, and send
only counts, digests and the proof to an Audit Service Provider.
"""

from __future__ import annotations

from .circuit import PublicStatement, Witness, build_circuit, check_relation, synthesize_witness
from .messages import AuditMessage, CircuitParams, TypeTable, count_types, extract_type
from .proof_system import CrsBundle, ProofBundle, prove, setup, verify

__version__ = "0.1.0"

__all__ = [
    "AuditMessage",
    "CircuitParams",
    "CrsBundle",
    "ProofBundle",
    "PublicStatement",
    "TypeTable",
    "Witness",
    "build_circuit",
    "check_relation",
    "count_types",
    "extract_type",
    "prove",
    "setup",
    "synthesize_witness",
    "verify",
]
