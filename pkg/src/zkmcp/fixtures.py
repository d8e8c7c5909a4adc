"""Deterministic wire traces used as bit-exact regression fixtures.

Only fixtures this package can regenerate live here.  Hash test vectors come
from an independent implementation and are never rewritten by this module.
"""

from __future__ import annotations

from pathlib import Path

from . import proof_system
from .circuit import synthesize_witness
from .messages import AuditMessage, CircuitParams, TypeTable
from .protocol import Asp
from .transport import WireEnvelope, dispatch

TRACE_FILE = "wire_trace.ndjson"
TRACE_S_ID = "agent-a:agent-b:1700000000000:00000000deadbeef"
TRACE_TYPES = ("request", "response", "notification", "ping")


def wire_trace() -> list[bytes]:
    """Request/reply lines for one audited n=4 session on the oracle backend."""
    table = TypeTable()
    crs = proof_system.setup(CircuitParams(len(TRACE_TYPES)), table, proof_system.ORACLE)
    msgs = [AuditMessage.of_type(t, 1700000000000 + i) for i, t in enumerate(TRACE_TYPES)]
    w, x = synthesize_witness(crs.circuit(), msgs)
    bundle = proof_system.prove(crs, x, w, TRACE_S_ID)
    asp = Asp(crs, insecure=True)
    requests = [
        WireEnvelope("session_start", TRACE_S_ID,
                     {"initiator": "agent-a", "peer": "agent-b", "start_time": 1700000000000, "submitter": "agent-a"}),
        WireEnvelope("audit_request", TRACE_S_ID,
                     {"statement": bundle.statement.to_dict(), "proof": bundle.proof_envelope(),
                      "filler_count": 1, "submitter": "agent-a"}),
        WireEnvelope("session_close", TRACE_S_ID,
                     {"end_time": 1700000000250, "msg_count": 4, "submitter": "agent-a"}),
    ]
    lines = []
    for req in requests:
        lines.append(req.encode())
        lines.append(dispatch(asp, req).encode())
    return lines


def regenerate(directory: Path) -> list[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / TRACE_FILE
    path.write_bytes(b"".join(wire_trace()))
    return [path]
