from __future__ import annotations

import itertools
import random
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_messages
from zkmcp import proof_system
from zkmcp.circuit import PublicStatement, synthesize_witness
from zkmcp.errors import (
    AspUnreachable,
    IllegalTransition,
    MalformedEnvelope,
    ProtocolError,
    SessionNotActive,
    ShapeMismatch,
    UnknownSession,
    UnknownType,
    WrongMessageCount,
)
from zkmcp.messages import AuditMessage, count_types
from zkmcp.protocol import (
    INVALID_PROOF,
    TRANSITIONS,
    Agent,
    Asp,
    Event,
    Prover,
    RetryQueue,
    SessionState,
    audit_request_body,
    generate_id,
    local_sender,
    transition,
)


def start(asp, s_id, who="a"):
    return asp.handle("session_start", s_id, {"initiator": who, "peer": "b", "submitter": who})


def audit_body(crs, msgs, *, tamper=False, s_id="s"):
    w, x = synthesize_witness(crs.circuit(), msgs)
    bundle = proof_system.prove(crs, x, w, s_id)
    if tamper:
        counts = list(bundle.statement.counts)
        counts[0] += 1
        bundle = proof_system.ProofBundle(bundle.proof, PublicStatement(counts, x.hashes), s_id,
                                          backend_id=bundle.backend_id)
    return {**audit_request_body(bundle), "submitter": "a"}


def test_transition_table_is_exactly_the_legal_set():
    legal = {
        (SessionState.INIT, Event.SESSION_START), (SessionState.SESSION_CLOSED, Event.SESSION_START),
        (SessionState.SESSION_ACTIVE, Event.AUDIT_REQUEST), (SessionState.SESSION_CLOSED, Event.AUDIT_REQUEST),
        (SessionState.SESSION_ACTIVE, Event.SESSION_CLOSE), (SessionState.AUDIT_VERIFIED, Event.SESSION_CLOSE),
        (SessionState.AUDIT_REJECTED, Event.SESSION_CLOSE),
    }
    assert set(TRANSITIONS) == legal
    for state, event in itertools.product(SessionState, Event):
        if (state, event) in legal:
            transition(state, event)
        else:
            with pytest.raises(IllegalTransition):
                transition(state, event)


def test_generate_id_unique_and_reproducible():
    ids = {generate_id("a", "b", 1) for _ in range(1000)}
    assert len(ids) == 1000
    assert generate_id("a", "b", 1, random.Random(1)) == generate_id("a", "b", 1, random.Random(1))


def test_honest_audit_verified(crs_cache, table, tmp_path):
    crs = crs_cache.real(2)
    asp = Asp(crs, tmp_path)
    assert start(asp, "s") == ("ack", {"state": "SESSION_ACTIVE"})
    kind, body = asp.handle("audit_request", "s", audit_body(crs, random_messages(random.Random(1), 2, table)))
    assert (kind, body["status"]) == ("audit_result", "verified")
    assert len(asp.audits) == 1 and not asp.violations
    assert asp.state_of("s", "a") is SessionState.AUDIT_VERIFIED
    kind, body = asp.handle("session_close", "s", {"submitter": "a", "msg_count": 2})
    assert body["state"] == "SESSION_CLOSED" and body["stats"]["audit_status"] == "verified"


def test_tampered_counts_rejected(crs_cache, table, tmp_path):
    crs = crs_cache.real(2)
    asp = Asp(crs, tmp_path)
    start(asp, "s")
    _, body = asp.handle("audit_request", "s", audit_body(crs, random_messages(random.Random(2), 2, table), tamper=True))
    assert body["status"] == "rejected"
    assert [v.reason for v in asp.violations] == [INVALID_PROOF]
    assert not asp.audits


def test_unknown_session(crs_cache, table):
    crs = crs_cache.real(1)
    asp = Asp(crs)
    with pytest.raises(UnknownSession):
        asp.handle("audit_request", "nope", audit_body(crs, random_messages(random.Random(0), 1, table)))
    with pytest.raises(UnknownSession):
        asp.handle("session_close", "nope", {"submitter": "a"})
    assert asp.sessions == {} and asp.audits == [] and asp.violations == []


def test_shape_mismatch_leaves_state(crs_cache, table):
    asp = Asp(crs_cache.real(1))
    start(asp, "s")
    with pytest.raises(ShapeMismatch):
        asp.handle("audit_request", "s", audit_body(crs_cache.real(2), random_messages(random.Random(0), 2, table)))
    assert asp.state_of("s", "a") is SessionState.SESSION_ACTIVE


def test_malformed_body_and_kind(crs_cache):
    asp = Asp(crs_cache.real(1))
    start(asp, "s")
    with pytest.raises(ProtocolError):
        asp.handle("audit_request", "s", {"submitter": "a"})
    with pytest.raises(ProtocolError):
        asp.handle("ack", "s", {"submitter": "a"})
    with pytest.raises(ProtocolError):
        asp.handle("session_start", "s", {})


def test_garbage_proof_is_violation(crs_cache, table):
    crs = crs_cache.real(1)
    asp = Asp(crs)
    start(asp, "s")
    body = audit_body(crs, random_messages(random.Random(0), 1, table))
    body["proof"] = {**body["proof"], "payload": "AAAA"}
    _, reply = asp.handle("audit_request", "s", body)
    assert reply["status"] == "rejected" and len(asp.violations) == 1


def test_duplicate_audit_request_is_idempotent(crs_cache, table):
    crs = crs_cache.real(1)
    asp = Asp(crs)
    start(asp, "s")
    body = audit_body(crs, random_messages(random.Random(0), 1, table))
    first = asp.handle("audit_request", "s", body)
    again = asp.handle("audit_request", "s", body)
    assert first[1]["status"] == again[1]["status"] == "verified"
    assert again[1]["replayed"] is True
    assert len(asp.audits) == 1
    asp.handle("session_close", "s", {"submitter": "a"})
    assert asp.handle("audit_request", "s", body)[1] == {"status": "verified", "replayed": True}


def test_oracle_backend_refused_without_flag(crs_cache):
    with pytest.raises(ProtocolError):
        Asp(crs_cache.oracle(1))
    Asp(crs_cache.oracle(1), insecure=True)


def test_mutual_audit_keys_on_submitter(crs_cache, table):
    crs = crs_cache.real(1)
    asp = Asp(crs)
    msgs = random_messages(random.Random(3), 1, table)
    for who in ("a", "b"):
        start(asp, "shared", who)
        body = {**audit_body(crs, msgs), "submitter": who}
        assert asp.handle("audit_request", "shared", body)[1]["status"] == "verified"
    assert {(a.s_id, a.submitter) for a in asp.audits} == {("shared", "a"), ("shared", "b")}


# -- agent ---------------------------------------------------------------------


def test_agent_end_to_end(crs_cache, table):
    crs = crs_cache.real(2)
    asp = Asp(crs)
    agent = Agent("alice", crs, local_sender(asp))
    s1 = agent.start_session("bob")
    s2 = agent.start_session("bob")
    assert s1 != s2 and set(agent.active_sessions) == {s1, s2}
    for t in ("request", "response"):
        agent.record_message(s1, AuditMessage.of_type(t).raw)
    bundle = agent.generate_audit(s1)
    assert list(bundle.statement.counts) == [1, 1, 0, 0, 0, 0, 0, 0]
    assert agent.results[s1] == "verified"
    assert agent.sessions[s1].messages == []
    assert asp.state_of(s1, "alice") is SessionState.SESSION_CLOSED
    with pytest.raises(SessionNotActive):
        agent.record_message(s1, AuditMessage.of_type("ping").raw)


def test_agent_message_guards(crs_cache):
    agent = Agent("a", crs_cache.oracle(1))
    s = agent.start_session("b")
    with pytest.raises(MalformedEnvelope):
        agent.record_message(s, b'{"kind": "x"}')
    with pytest.raises(UnknownType):
        agent.record_message(s, b'{"type": "tools/call"}')
    with pytest.raises(SessionNotActive):
        agent.record_message("missing", b'{"type": "ping"}')


def test_short_session_without_filler_is_wrong_count(crs_cache, table):
    crs = crs_cache.oracle(8)
    agent = Agent("a", crs)
    s = agent.start_session("b")
    for m in random_messages(random.Random(0), 5, table):
        agent.record_message(s, m.raw)
    agent.end_session(s, pad=False)
    with pytest.raises(WrongMessageCount):
        agent.generate_audit(s)


def test_filler_pads_with_ping(crs_cache, table):
    crs = crs_cache.oracle(8)
    asp = Asp(crs, insecure=True)
    agent = Agent("a", crs, local_sender(asp))
    s = agent.start_session("b")
    for t in ("request", "request", "result"):
        agent.record_message(s, AuditMessage.of_type(t).raw)
    assert agent.end_session(s) == 5
    bundle = agent.generate_audit(s)
    assert list(bundle.statement.counts) == [2, 0, 0, 0, 5, 0, 0, 1]
    assert asp.audits[0].filler_count == 5


def test_asp_down_then_recovers(crs_cache, table):
    crs = crs_cache.real(1)
    asp = Asp(crs)
    up = {"ok": False}
    inner = local_sender(asp)

    def flaky(kind, s_id, body):
        if not up["ok"]:
            raise AspUnreachable("down")
        return inner(kind, s_id, body)

    agent = Agent("a", crs, flaky)
    agent.outbox.base_delay = 0.001
    s = agent.start_session("b")  # proceeds despite the outage
    agent.record_message(s, random_messages(random.Random(0), 1, table)[0].raw)
    agent.generate_audit(s)
    assert len(agent.outbox) == 3
    assert not agent.flush(timeout=0.05)
    up["ok"] = True
    assert agent.flush(timeout=5)
    assert agent.results[s] == "verified"
    assert asp.state_of(s, "a") is SessionState.SESSION_CLOSED


def test_retry_queue_backoff_grows():
    calls = []

    def never(kind, s_id, body):
        calls.append(time.monotonic())
        raise AspUnreachable("down")

    q = RetryQueue(never, base_delay=0.01, max_delay=0.08)
    q.submit("session_start", "s", {})
    q.flush(timeout=0.5)
    gaps = [b - a for a, b in zip(calls, calls[1:])]
    assert len(gaps) >= 3
    assert gaps[1] > gaps[0] * 1.3
    assert max(gaps) < 0.2


def test_record_cost_does_not_accumulate(crs_cache):
    agent = Agent("a", crs_cache.oracle(1))
    s = agent.start_session("b")
    raw = AuditMessage.of_type("request").raw
    timings = []
    for _ in range(512):
        t0 = time.perf_counter_ns()
        agent.record_message(s, raw)
        timings.append(time.perf_counter_ns() - t0)
    early = sorted(timings[:32])[16]
    late = sorted(timings[-32:])[16]
    assert late < 10 * early
    assert agent.sessions[s].msg_count == 512


def test_non_interference_with_proving(crs_cache, table):
    """Record-call timestamps are identical with proving disabled and enabled."""
    crs = crs_cache.real(2)
    script = [m.raw for m in random_messages(random.Random(4), 2, table)]

    def run(prove: bool):
        ticks = itertools.count(1000)
        agent = Agent("a", crs, local_sender(Asp(crs)), clock=lambda: next(ticks),
                      prover=Prover(crs, "thread"), id_rng=random.Random(0))
        s = agent.start_session("b")
        stamps = [agent.record_message(s, r).timestamp for r in script]
        agent.end_session(s)
        fut = agent.audit_async(s) if prove else None
        if fut is not None:
            assert fut.result().status == "verified"
        agent.prover.close()
        return s, stamps

    assert run(False) == run(True)


def test_audit_async_outcome(crs_cache, table):
    crs = crs_cache.real(1)
    agent = Agent("a", crs, local_sender(Asp(crs)), prover=Prover(crs, "thread"))
    s = agent.start_session("b")
    agent.record_message(s, random_messages(random.Random(1), 1, table)[0].raw)
    agent.end_session(s)
    ended = time.monotonic()
    out = agent.audit_async(s).result(timeout=30)
    agent.prover.close()
    assert out.status == "verified" and out.started_at >= ended and out.prove_ms > 0


def _script_events(crs, table, s_id, seed, tamper):
    msgs = random_messages(random.Random(seed), crs.params.n, table)
    return [
        ("session_start", s_id, {"initiator": "a", "peer": "b", "submitter": "a", "start_time": 1}),
        ("audit_request", s_id, audit_body(crs, msgs, tamper=tamper, s_id=s_id)),
        ("session_close", s_id, {"submitter": "a", "end_time": 5, "msg_count": crs.params.n}),
    ]


@settings(max_examples=25, deadline=None)
@given(st.permutations([0, 0, 0, 1, 1, 1]))
def test_concurrent_isolation(crs_cache, table, order):
    crs = crs_cache.oracle(1)
    events = [_script_events(crs, table, "s1", 1, False), _script_events(crs, table, "s2", 2, True)]

    def final(asp):
        return {k: (r.state, r.audit_status) for k, r in asp.sessions.items()}

    serial = Asp(crs, insecure=True)
    for evs in events:
        for e in evs:
            serial.handle(*e)
    mixed = Asp(crs, insecure=True)
    pos = [0, 0]
    for which in order:
        mixed.handle(*events[which][pos[which]])
        pos[which] += 1
    assert final(mixed) == final(serial)


def test_concurrent_threads_isolated(crs_cache, table):
    from concurrent.futures import ThreadPoolExecutor

    crs = crs_cache.oracle(1)
    asp = Asp(crs, insecure=True)
    scripts = [_script_events(crs, table, f"s{k}", k, k % 3 == 0) for k in range(30)]

    def run(evs):
        for e in evs:
            asp.handle(*e)

    with ThreadPoolExecutor(8) as pool:
        list(pool.map(run, scripts))
    for k in range(30):
        rec = asp.sessions[(f"s{k}", "a")]
        assert rec.state is SessionState.SESSION_CLOSED
        assert rec.audit_status == ("rejected" if k % 3 == 0 else "verified")
    # at most one decision record per audit
    keys = [(a.s_id, a.submitter) for a in asp.audits] + [(v.s_id, v.submitter) for v in asp.violations]
    assert len(keys) == len(set(keys)) == 30


def test_persistence_replay(crs_cache, table, tmp_path):
    crs = crs_cache.oracle(1)
    asp = Asp(crs, tmp_path, insecure=True)
    for k in range(10):
        for e in _script_events(crs, table, f"s{k}", k, k % 2 == 1):
            asp.handle(*e)
    start(asp, "s0")  # reopened session: its old decision no longer applies
    start(asp, "open")
    rebuilt = Asp.open(crs, tmp_path, insecure=True)
    assert rebuilt.registry_state() == asp.registry_state()
    assert {(a.s_id, a.counts) for a in rebuilt.audits} == {(a.s_id, a.counts) for a in asp.audits}


def test_replay_skips_torn_line(crs_cache, table, tmp_path):
    crs = crs_cache.oracle(1)
    asp = Asp(crs, tmp_path, insecure=True)
    for e in _script_events(crs, table, "s", 1, False):
        asp.handle(*e)
    with open(tmp_path / Asp.AUDIT_DB, "a") as fh:
        fh.write('{"s_id": "torn"')
    assert Asp.open(crs, tmp_path, insecure=True).registry_state() == asp.registry_state()


def test_counts_match_oracle_through_agent(crs_cache, table):
    crs = crs_cache.oracle(4)
    asp = Asp(crs, insecure=True)
    agent = Agent("a", crs, local_sender(asp))
    rng = random.Random(11)
    for _ in range(10):
        msgs = random_messages(rng, 4, table)
        s = agent.start_session("b")
        for m in msgs:
            agent.record_message(s, m.raw)
        assert list(agent.generate_audit(s).statement.counts) == count_types(msgs, table)
