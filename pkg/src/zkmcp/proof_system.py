"""Setup / Prove / Verify over the audit circuit.

Two backends are available:

``groth16-bn254``
    Pairing-based SNARK with a per-circuit (single-party) trusted setup.
``insecure-oracle``
    Runs the relation check at proving time and emits a hash-tagged
    transcript of the statement.  Anyone can forge its proofs; it exists so
    protocol and transport tests run fast.  The ASP refuses it unless
    started with ``--insecure``.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import random
import threading
from dataclasses import dataclass, field
from pathlib import Path

from . import groth16
from .circuit import (
    ConstraintSystem,
    PublicStatement,
    Witness,
    build_circuit,
    check_relation,
    full_assignment,
)
from .errors import (
    BackendUnavailable,
    CorruptCrs,
    MalformedProof,
    RelationUnsatisfied,
    ShapeMismatch,
)
from .messages import CircuitParams, TypeTable, now_ms
from .poseidon import PARAMS_ID

log = logging.getLogger(__name__)

GROTH16 = "groth16-bn254"
ORACLE = "insecure-oracle"
BACKENDS = (GROTH16, ORACLE)
ENVELOPE_VERSION = 1

_ORACLE_TAG = b"zkmcp-insecure-oracle/v1:"


@dataclass
class CrsBundle:
    proving_key: bytes
    verification_key: bytes
    circuit_meta: dict
    hash_params_id: str
    backend_id: str
    _pk: groth16.ProvingKey | None = field(default=None, repr=False, compare=False)
    _vk: groth16.VerifyingKey | None = field(default=None, repr=False, compare=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @property
    def params(self) -> CircuitParams:
        m = self.circuit_meta
        return CircuitParams(m["n"], m["max_json"], m["max_type"], m["num_types"])

    @property
    def table(self) -> TypeTable:
        return TypeTable(tuple(self.circuit_meta["type_table"]), max_type=self.circuit_meta["max_type"])

    @property
    def circuit_id(self) -> str:
        return self.circuit().circuit_id

    def circuit(self) -> ConstraintSystem:
        return build_circuit(self.params, self.table)

    def pk(self) -> groth16.ProvingKey:
        with self._lock:
            if self._pk is None:
                try:
                    self._pk = groth16.ProvingKey.from_bytes(self.proving_key)
                except ValueError as exc:
                    raise CorruptCrs(f"proving key: {exc}") from exc
            return self._pk

    def vk(self) -> groth16.VerifyingKey:
        with self._lock:
            if self._vk is None:
                try:
                    self._vk = groth16.VerifyingKey.from_bytes(self.verification_key)
                except ValueError as exc:
                    raise CorruptCrs(f"verification key: {exc}") from exc
            return self._vk

    def metadata(self) -> dict:
        return {
            "backend_id": self.backend_id,
            "hash_params_id": self.hash_params_id,
            "version": ENVELOPE_VERSION,
            "circuit": self.circuit_meta,
        }

    def save(self, root: str | Path) -> Path:
        """Write ``<root>/<circuit-id>/{pk.bin, vk.bin, meta.json}``; returns the directory."""
        d = Path(root) / self.circuit_id
        d.mkdir(parents=True, exist_ok=True)
        (d / "pk.bin").write_bytes(self.proving_key)
        (d / "vk.bin").write_bytes(self.verification_key)
        (d / "meta.json").write_text(json.dumps(self.metadata(), indent=2), encoding="utf-8")
        return d

    @classmethod
    def load(cls, path: str | Path, *, verifier_only: bool = False) -> "CrsBundle":
        d = Path(path)
        if not (d / "meta.json").exists():
            # accept a root holding exactly one circuit directory
            subs = [p for p in d.iterdir() if (p / "meta.json").exists()] if d.is_dir() else []
            if len(subs) != 1:
                raise CorruptCrs(f"{d}: no meta.json (found {len(subs)} circuit directories)")
            d = subs[0]
        try:
            meta = json.loads((d / "meta.json").read_text(encoding="utf-8"))
            vk = (d / "vk.bin").read_bytes()
            pk = b"" if verifier_only else (d / "pk.bin").read_bytes()
            crs = cls(pk, vk, meta["circuit"], meta["hash_params_id"], meta["backend_id"])
        except (OSError, KeyError, ValueError) as exc:
            raise CorruptCrs(f"{d}: {exc}") from exc
        if crs.hash_params_id != PARAMS_ID:
            raise CorruptCrs(f"hash parameter set {crs.hash_params_id!r} != {PARAMS_ID!r}")
        if crs.backend_id not in BACKENDS:
            raise CorruptCrs(f"unknown backend {crs.backend_id!r}")
        cs = crs.circuit()
        if (cs.constraint_count, cs.wire_count) != (meta["circuit"]["constraint_count"], meta["circuit"]["wire_count"]):
            raise CorruptCrs("circuit rebuilt from metadata does not match the recorded shape")
        if crs.backend_id == GROTH16:
            crs.vk()
        return crs


@dataclass(frozen=True)
class ProofBundle:
    proof: bytes
    statement: PublicStatement
    s_id: str = ""
    created_at: int = 0
    backend_id: str = GROTH16
    hash_params_id: str = PARAMS_ID

    def proof_envelope(self) -> dict:
        return {
            "backend_id": self.backend_id,
            "hash_params_id": self.hash_params_id,
            "version": ENVELOPE_VERSION,
            "payload": base64.b64encode(self.proof).decode("ascii"),
        }

    def to_dict(self) -> dict:
        return {
            "proof": self.proof_envelope(),
            "statement": self.statement.to_dict(),
            "s_id": self.s_id,
            "created_at": self.created_at,
        }

    @classmethod
    def from_parts(cls, proof_env: dict, statement: dict, s_id: str = "", created_at: int = 0) -> "ProofBundle":
        try:
            payload = base64.b64decode(proof_env["payload"], validate=True)
            backend = str(proof_env["backend_id"])
            hpid = str(proof_env.get("hash_params_id", PARAMS_ID))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedProof(f"undecodable proof envelope: {exc}") from exc
        return cls(payload, PublicStatement.from_dict(statement), s_id, created_at, backend, hpid)

    @classmethod
    def from_dict(cls, d: dict) -> "ProofBundle":
        return cls.from_parts(d["proof"], d["statement"], d.get("s_id", ""), d.get("created_at", 0))


def setup(
    params: CircuitParams,
    table: TypeTable,
    backend: str = GROTH16,
    rng: random.Random | None = None,
) -> CrsBundle:
    if backend not in BACKENDS:
        raise BackendUnavailable(f"unknown backend {backend!r}; choose from {BACKENDS}")
    cs = build_circuit(params, table)
    meta = {**cs.meta(), "circuit_id": cs.circuit_id}
    if backend == ORACLE:
        return CrsBundle(b"", b"", meta, PARAMS_ID, ORACLE)
    pk, vk = groth16.setup(cs.constraints, cs.num_public, cs.wire_count, rng)
    crs = CrsBundle(pk.to_bytes(), vk.to_bytes(), meta, PARAMS_ID, GROTH16)
    crs._pk, crs._vk = pk, vk
    log.info("setup %s: %d constraints, domain %d", cs.circuit_id, cs.constraint_count, pk.domain_size)
    return crs


def _check_shape(crs: CrsBundle, x: PublicStatement) -> None:
    K, n = crs.circuit_meta["num_types"], crs.circuit_meta["n"]
    if len(x.counts) != K or len(x.hashes) != n:
        raise ShapeMismatch(f"statement has {len(x.counts)} counts / {len(x.hashes)} hashes, crs expects {K} / {n}")


def _oracle_tag(x: PublicStatement) -> bytes:
    blob = json.dumps(x.to_dict(), separators=(",", ":"), sort_keys=True).encode()
    return _ORACLE_TAG + hashlib.sha256(blob).digest()


def prove(
    crs: CrsBundle,
    x: PublicStatement,
    w: Witness,
    s_id: str = "",
    rng: random.Random | None = None,
) -> ProofBundle:
    _check_shape(crs, x)
    cs = crs.circuit()
    if not check_relation(cs, x, w):
        raise RelationUnsatisfied("statement and witness do not satisfy the circuit")
    if crs.backend_id == ORACLE:
        payload = _oracle_tag(x)
    else:
        payload = groth16.prove(crs.pk(), cs.constraints, full_assignment(cs, x, w), rng).to_bytes()
    return ProofBundle(payload, x, s_id, now_ms(), crs.backend_id, crs.hash_params_id)


def verify(crs: CrsBundle, p: ProofBundle) -> bool:
    """True for a valid proof; raises :class:`MalformedProof` for undecodable bytes."""
    _check_shape(crs, p.statement)
    if p.backend_id != crs.backend_id or p.hash_params_id != crs.hash_params_id:
        raise MalformedProof(
            f"proof made for {p.backend_id}/{p.hash_params_id}, crs is {crs.backend_id}/{crs.hash_params_id}"
        )
    if crs.backend_id == ORACLE:
        if not p.proof.startswith(_ORACLE_TAG):
            raise MalformedProof("not an oracle transcript")
        return p.proof == _oracle_tag(p.statement)
    try:
        proof = groth16.Proof.from_bytes(p.proof)
    except ValueError as exc:
        raise MalformedProof(str(exc)) from exc
    return groth16.verify(crs.vk(), p.statement.inputs(), proof)
