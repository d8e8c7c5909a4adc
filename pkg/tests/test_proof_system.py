from __future__ import annotations

import base64
import json
import random

import pytest

from conftest import random_messages
from zkmcp import groth16, proof_system
from zkmcp.circuit import PublicStatement, assign_witness, check_relation, synthesize_witness
from zkmcp.errors import BackendUnavailable, CorruptCrs, MalformedProof, RelationUnsatisfied, ShapeMismatch
from zkmcp.messages import AuditMessage, CircuitParams
from zkmcp.poseidon import FIELD_MODULUS
from zkmcp.proof_system import CrsBundle, ProofBundle


def honest(crs, seed=0):
    msgs = random_messages(random.Random(seed), crs.params.n, crs.table)
    return synthesize_witness(crs.circuit(), msgs)


def test_real_setup_metadata(crs_cache):
    crs = crs_cache.real(8)
    assert crs.circuit_meta["n"] == 8
    assert crs.backend_id == proof_system.GROTH16
    assert crs.hash_params_id == crs.circuit_meta["hash_params_id"]


def test_oracle_setup_has_empty_keys(crs_cache):
    crs = crs_cache.oracle(2)
    assert crs.backend_id == "insecure-oracle"
    assert crs.proving_key == b"" and crs.verification_key == b""


def test_unknown_backend(table):
    with pytest.raises(BackendUnavailable):
        proof_system.setup(CircuitParams(1), table, "plonk")


def test_two_setups_differ_and_both_complete(table):
    a = proof_system.setup(CircuitParams(1), table)
    b = proof_system.setup(CircuitParams(1), table)
    assert a.verification_key != b.verification_key
    for crs in (a, b):
        w, x = honest(crs)
        assert proof_system.verify(crs, proof_system.prove(crs, x, w))


def test_proof_does_not_verify_under_other_setup(crs_cache, table):
    other = proof_system.setup(CircuitParams(1), table, rng=random.Random(77))
    crs = crs_cache.real(1)
    w, x = honest(crs)
    assert not proof_system.verify(other, proof_system.prove(crs, x, w))


def test_prove_refuses_false_statement(crs_cache):
    crs = crs_cache.real(2)
    w, x = honest(crs)
    counts = list(x.counts)
    counts[0] += 1
    with pytest.raises(RelationUnsatisfied):
        proof_system.prove(crs, PublicStatement(counts, x.hashes), w)


def test_perturbed_statement_rejected(crs_cache):
    crs = crs_cache.real(2)
    w, x = honest(crs, 3)
    p = proof_system.prove(crs, x, w)
    counts = list(x.counts)
    counts[0] += 1
    forged = ProofBundle(p.proof, PublicStatement(counts, x.hashes))
    assert proof_system.verify(crs, p)
    assert not proof_system.verify(crs, forged)


def test_shape_mismatch(crs_cache):
    crs = crs_cache.real(1)
    w, x = honest(crs)
    p = proof_system.prove(crs, x, w)
    with pytest.raises(ShapeMismatch):
        proof_system.verify(crs_cache.real(2), p)
    with pytest.raises(ShapeMismatch):
        proof_system.prove(crs_cache.real(2), x, w)


def test_random_bytes_as_proof(crs_cache):
    crs = crs_cache.real(1)
    _, x = honest(crs)
    rng = random.Random(9)
    for size in (192, 128, 128, 127):
        bundle = ProofBundle(rng.randbytes(size), x)
        try:
            assert proof_system.verify(crs, bundle) is False
        except MalformedProof:
            pass


def test_proof_size_constant(crs_cache):
    for n in (1, 2):
        crs = crs_cache.real(n)
        w, x = honest(crs)
        assert len(proof_system.prove(crs, x, w).proof) == groth16.PROOF_BYTES


def test_oracle_transcript_has_no_witness(crs_cache):
    crs = crs_cache.oracle(1)
    w, x = honest(crs)
    p = proof_system.prove(crs, x, w)
    assert p.proof.startswith(b"zkmcp-insecure-oracle/v1:")
    assert b"type" not in p.proof
    assert proof_system.verify(crs, p)
    counts = list(x.counts)
    counts[0] += 1
    assert not proof_system.verify(crs, ProofBundle(p.proof, PublicStatement(counts, x.hashes),
                                                    backend_id=proof_system.ORACLE))


def test_backend_mismatch_is_malformed(crs_cache):
    real, oracle = crs_cache.real(1), crs_cache.oracle(1)
    w, x = honest(real)
    with pytest.raises(MalformedProof):
        proof_system.verify(real, proof_system.prove(oracle, x, w))


def test_envelope_round_trip(crs_cache):
    crs = crs_cache.real(1)
    w, x = honest(crs)
    p = proof_system.prove(crs, x, w, s_id="abc")
    env = p.proof_envelope()
    assert set(env) == {"backend_id", "hash_params_id", "version", "payload"}
    again = ProofBundle.from_dict(json.loads(json.dumps(p.to_dict())))
    assert again.proof == p.proof and again.statement == x and again.s_id == "abc"
    assert proof_system.verify(crs, again)
    with pytest.raises(MalformedProof):
        ProofBundle.from_parts({"backend_id": "x", "payload": "!!"}, x.to_dict())


def test_seeded_prove_is_reproducible(crs_cache):
    crs = crs_cache.real(1)
    w, x = honest(crs)
    a = proof_system.prove(crs, x, w, rng=random.Random(4))
    b = proof_system.prove(crs, x, w, rng=random.Random(4))
    c = proof_system.prove(crs, x, w, rng=random.Random(5))
    assert a.proof == b.proof != c.proof


def test_save_load(tmp_path, crs_cache):
    crs = crs_cache.real(1)
    d = crs.save(tmp_path / "crs")
    assert d.name == crs.circuit_id
    assert {p.name for p in d.iterdir()} == {"pk.bin", "vk.bin", "meta.json"}
    loaded = CrsBundle.load(tmp_path / "crs")
    w, x = honest(loaded, 5)
    assert proof_system.verify(crs, proof_system.prove(loaded, x, w))
    verifier = CrsBundle.load(d, verifier_only=True)
    assert verifier.proving_key == b""
    assert proof_system.verify(verifier, proof_system.prove(crs, x, w))


def test_corrupt_crs(tmp_path, crs_cache):
    d = crs_cache.real(1).save(tmp_path)
    (d / "vk.bin").write_bytes(b"\x00" * 10)
    with pytest.raises(CorruptCrs):
        CrsBundle.load(d)
    d = crs_cache.real(1).save(tmp_path / "b")
    meta = json.loads((d / "meta.json").read_text())
    meta["circuit"]["constraint_count"] += 1
    (d / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(CorruptCrs):
        CrsBundle.load(d)
    d = crs_cache.real(1).save(tmp_path / "c")
    meta = json.loads((d / "meta.json").read_text())
    meta["hash_params_id"] = "poseidon-other"
    (d / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(CorruptCrs):
        CrsBundle.load(d)
    with pytest.raises(CorruptCrs):
        CrsBundle.load(tmp_path / "missing")


def test_bit_flipped_proof(crs_cache):
    crs = crs_cache.real(1)
    w, x = honest(crs)
    p = proof_system.prove(crs, x, w)
    raw = bytearray(p.proof)
    for k in (0, 40, 100, 127):
        flipped = bytearray(raw)
        flipped[k] ^= 0x01
        try:
            assert not proof_system.verify(crs, ProofBundle(bytes(flipped), x))
        except MalformedProof:
            pass


def _adversarial_cases(cs, rng):
    """(x, w) pairs with no valid relation, in the flavours the soundness suite uses."""
    table = cs.table
    cases = []
    for k in range(20):
        msgs = random_messages(rng, cs.params.n, table)
        w, x = synthesize_witness(cs, msgs)
        kind = k % 5
        if kind == 0:
            counts = list(x.counts)
            counts[rng.randrange(8)] += rng.choice((1, -1 + FIELD_MODULUS))
            cases.append((PublicStatement(counts, x.hashes), w))
        elif kind == 1:
            hashes = list(x.hashes)
            hashes[0] = rng.randrange(FIELD_MODULUS)
            cases.append((PublicStatement(x.counts, hashes), w))
        elif kind == 2:
            row = bytearray(msgs[0].padded())
            row[63] = rng.randrange(1, 256)
            bad = assign_witness(cs, [bytes(row)] + [m.padded() for m in msgs[1:]], [m.type_len for m in msgs])
            cases.append((bad.public(), bad))
        elif kind == 3:
            lens = [m.type_len for m in msgs]
            lens[0] = lens[0] % 20 + 1
            bad = assign_witness(cs, [m.padded() for m in msgs], lens)
            cases.append((bad.public(), bad))
        else:
            raw = b'{"type": "forbidden"}'.ljust(64, b"\x00")
            bad = assign_witness(cs, [raw] + [m.padded() for m in msgs[1:]], [9] + [m.type_len for m in msgs[1:]])
            cases.append((bad.public(), bad))
    return cases


def _decision(crs, x, w):
    try:
        return proof_system.verify(crs, proof_system.prove(crs, x, w))
    except RelationUnsatisfied:
        return False


def test_backend_agreement(crs_cache, table):
    real, oracle = crs_cache.real(1), crs_cache.oracle(1)
    cs = real.circuit()
    rng = random.Random(31)
    random_cases = []
    for _ in range(100):
        w, x = synthesize_witness(cs, random_messages(rng, 1, table))
        if rng.random() < 0.5:
            counts = list(x.counts)
            j = rng.randrange(8)
            counts[j] = (counts[j] + 1) % FIELD_MODULUS
            x = PublicStatement(counts, x.hashes)
        random_cases.append((x, w))
    adversarial = _adversarial_cases(cs, rng)
    assert len(adversarial) >= 20
    for x, w in random_cases + adversarial:
        expected = check_relation(cs, x, w)
        assert _decision(real, x, w) == _decision(oracle, x, w) == expected
    assert not any(check_relation(cs, x, w) for x, w in adversarial)


def test_envelope_payload_is_base64(crs_cache):
    crs = crs_cache.real(1)
    w, x = honest(crs)
    env = proof_system.prove(crs, x, w).proof_envelope()
    assert len(base64.b64decode(env["payload"])) == groth16.PROOF_BYTES


def test_concurrent_prove_and_verify(crs_cache, table):
    from concurrent.futures import ThreadPoolExecutor

    crs = crs_cache.real(1)
    cs = crs.circuit()
    jobs = [synthesize_witness(cs, [AuditMessage.of_type(t)]) for t in table.entries]
    with ThreadPoolExecutor(4) as pool:
        proofs = list(pool.map(lambda wx: proof_system.prove(crs, wx[1], wx[0]), jobs))
        assert all(pool.map(lambda p: proof_system.verify(crs, p), proofs))
