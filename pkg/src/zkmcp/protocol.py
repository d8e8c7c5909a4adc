"""Session lifecycle on the agent side and audit verification on the ASP side.

The ASP keeps one state machine per ``(s_id, submitter)`` so both endpoints of
a session can audit independently.  Everything the ASP learns arrives through
:meth:`Asp.handle`; everything it decides is appended to JSON-lines logs under
its storage directory and can be rebuilt with :meth:`Asp.open`.
"""

from __future__ import annotations

import enum
import json
import logging
import multiprocessing
import os
import secrets
import threading
import time
from collections import deque
from concurrent.futures import Future, ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

from . import proof_system
from .circuit import synthesize_witness
from .errors import (
    AspUnreachable,
    IllegalTransition,
    MalformedProof,
    ProtocolError,
    ProveFailure,
    RelationUnsatisfied,
    SessionNotActive,
    ShapeMismatch,
    UnknownSession,
    WrongMessageCount,
    ZkMcpError,
)
from .messages import AuditMessage, now_ms
from .proof_system import CrsBundle, ProofBundle

log = logging.getLogger(__name__)

INVALID_PROOF = "Invalid proof"
FILLER_TYPE = "ping"

VERIFIED = "verified"
REJECTED = "rejected"


class SessionState(str, enum.Enum):
    INIT = "INIT"
    SESSION_ACTIVE = "SESSION_ACTIVE"
    AUDIT_PENDING = "AUDIT_PENDING"
    AUDIT_VERIFIED = "AUDIT_VERIFIED"
    AUDIT_REJECTED = "AUDIT_REJECTED"
    SESSION_CLOSED = "SESSION_CLOSED"


class Event(str, enum.Enum):
    SESSION_START = "session_start"
    AUDIT_REQUEST = "audit_request"
    SESSION_CLOSE = "session_close"


S = SessionState
TRANSITIONS: dict[tuple[SessionState, Event], SessionState] = {
    (S.INIT, Event.SESSION_START): S.SESSION_ACTIVE,
    (S.SESSION_CLOSED, Event.SESSION_START): S.SESSION_ACTIVE,
    (S.SESSION_ACTIVE, Event.AUDIT_REQUEST): S.AUDIT_PENDING,
    (S.SESSION_CLOSED, Event.AUDIT_REQUEST): S.AUDIT_PENDING,
    (S.SESSION_ACTIVE, Event.SESSION_CLOSE): S.SESSION_CLOSED,
    (S.AUDIT_VERIFIED, Event.SESSION_CLOSE): S.SESSION_CLOSED,
    (S.AUDIT_REJECTED, Event.SESSION_CLOSE): S.SESSION_CLOSED,
}


def transition(state: SessionState, event: Event) -> SessionState:
    try:
        return TRANSITIONS[(state, event)]
    except KeyError:
        raise IllegalTransition(f"{event.value} not allowed in {state.value}") from None


def generate_id(initiator: str, peer: str, timestamp: int | None = None, rng=None) -> str:
    """initiator:peer:ms-timestamp:64-bit random suffix (``rng`` only for reproducible runs)."""
    ts = now_ms() if timestamp is None else timestamp
    suffix = secrets.token_hex(8) if rng is None else f"{rng.getrandbits(64):016x}"
    return f"{initiator}:{peer}:{ts}:{suffix}"


def audit_request_body(bundle: ProofBundle, filler_count: int = 0) -> dict:
    return {
        "statement": bundle.statement.to_dict(),
        "proof": bundle.proof_envelope(),
        "filler_count": filler_count,
    }


# -- ASP records ---------------------------------------------------------------


@dataclass
class SessionRecord:
    s_id: str
    initiator: str
    peer: str
    submitter: str
    start_time: int
    end_time: int | None = None
    msg_count: int = 0
    state: SessionState = SessionState.INIT
    audit_status: str | None = None

    @property
    def duration(self) -> int | None:
        return None if self.end_time is None else self.end_time - self.start_time

    def to_dict(self) -> dict:
        d = asdict(self)
        d["state"] = self.state.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SessionRecord":
        return cls(**{**d, "state": SessionState(d["state"])})


@dataclass(frozen=True)
class AuditRecord:
    s_id: str
    submitter: str
    counts: tuple[int, ...]
    hashes: tuple[str, ...]
    verified_at: int
    filler_count: int = 0

    def to_dict(self) -> dict:
        return {**asdict(self), "counts": list(self.counts), "hashes": list(self.hashes)}

    @classmethod
    def from_dict(cls, d: dict) -> "AuditRecord":
        return cls(d["s_id"], d["submitter"], tuple(d["counts"]), tuple(d["hashes"]),
                   d["verified_at"], d.get("filler_count", 0))


@dataclass(frozen=True)
class Violation:
    s_id: str
    submitter: str
    flagged_at: int
    reason: str = INVALID_PROOF

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Violation":
        return cls(d["s_id"], d["submitter"], d["flagged_at"], d.get("reason", INVALID_PROOF))


class JsonlLog:
    """Append-only JSON-lines file; each append is one locked write + flush."""

    def __init__(self, path: Path | None, fsync: bool = False):
        self.path = path
        self.fsync = fsync
        self._lock = threading.Lock()

    def append(self, record: dict) -> None:
        if self.path is None:
            return
        line = json.dumps(record, separators=(",", ":"), sort_keys=True) + "\n"
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line)
            fh.flush()
            if self.fsync:
                os.fsync(fh.fileno())

    def read(self) -> list[dict]:
        if self.path is None or not self.path.exists():
            return []
        out = []
        with open(self.path, encoding="utf-8") as fh:
            for n, line in enumerate(fh, 1):
                if line.strip():
                    try:
                        out.append(json.loads(line))
                    except json.JSONDecodeError:
                        # torn final line after a crash; everything before it is intact
                        log.warning("%s:%d: skipping undecodable line", self.path, n)
        return out


Key = tuple[str, str]  # (s_id, submitter)


class Asp:
    """Audit Service Provider: verifies audit proofs and keeps the audit logs."""

    AUDIT_DB = "audit_db.jsonl"
    VIOLATIONS = "violations.jsonl"
    SESSIONS = "sessions.jsonl"

    def __init__(self, crs: CrsBundle, storage_dir: str | Path | None = None, *, insecure: bool = False):
        if crs.backend_id == proof_system.ORACLE and not insecure:
            raise ProtocolError("refusing the insecure-oracle backend without insecure=True")
        self.crs = crs
        self.storage = None if storage_dir is None else Path(storage_dir)
        if self.storage is not None:
            self.storage.mkdir(parents=True, exist_ok=True)
        p = (lambda name: None) if self.storage is None else (lambda name: self.storage / name)
        self.audit_log = JsonlLog(p(self.AUDIT_DB))
        self.violation_log = JsonlLog(p(self.VIOLATIONS))
        self.session_log = JsonlLog(p(self.SESSIONS))
        self.sessions: dict[Key, SessionRecord] = {}
        self.audits: list[AuditRecord] = []
        self.violations: list[Violation] = []
        self.decisions: dict[Key, str] = {}
        self._locks: dict[Key, threading.Lock] = {}
        self._registry_lock = threading.Lock()

    # -- persistence

    @classmethod
    def open(cls, crs: CrsBundle, storage_dir: str | Path, *, insecure: bool = False) -> "Asp":
        """Create an ASP whose in-memory registry is rebuilt from the logs in ``storage_dir``."""
        asp = cls(crs, storage_dir, insecure=insecure)
        asp._replay()
        return asp

    def _replay(self) -> None:
        for d in self.session_log.read():
            rec = SessionRecord.from_dict(d)
            self.sessions[(rec.s_id, rec.submitter)] = rec
        self.audits = [AuditRecord.from_dict(d) for d in self.audit_log.read()]
        self.violations = [Violation.from_dict(d) for d in self.violation_log.read()]
        # decisions follow log order; a later session_start on the same key clears them
        stamped = [(a.verified_at, 0, (a.s_id, a.submitter), VERIFIED) for a in self.audits]
        stamped += [(v.flagged_at, 0, (v.s_id, v.submitter), REJECTED) for v in self.violations]
        for _, _, key, status in sorted(stamped, key=lambda t: t[0]):
            self.decisions[key] = status
        for key, rec in self.sessions.items():
            if rec.audit_status is None:
                self.decisions.pop(key, None)
        log.info("replayed %d sessions, %d audits, %d violations",
                 len(self.sessions), len(self.audits), len(self.violations))

    def registry_state(self) -> dict:
        """Comparable snapshot of everything the ASP has decided."""
        return {
            "sessions": {f"{k[0]}|{k[1]}": r.to_dict() for k, r in sorted(self.sessions.items())},
            "decisions": {f"{k[0]}|{k[1]}": v for k, v in sorted(self.decisions.items())},
            "verified": sorted((a.s_id, a.submitter, a.counts) for a in self.audits),
            "violations": sorted((v.s_id, v.submitter, v.reason) for v in self.violations),
        }

    # -- event handling

    def _lock_for(self, key: Key) -> threading.Lock:
        with self._registry_lock:
            return self._locks.setdefault(key, threading.Lock())

    def _save(self, rec: SessionRecord) -> None:
        self.session_log.append(rec.to_dict())

    def state_of(self, s_id: str, submitter: str) -> SessionState:
        rec = self.sessions.get((s_id, submitter))
        return SessionState.INIT if rec is None else rec.state

    def handle(self, kind: str, s_id: str, body: dict) -> tuple[str, dict]:
        """Apply one inbound event; returns ``(reply_kind, reply_body)``.

        Raises :class:`IllegalTransition` (incl. :class:`UnknownSession`),
        :class:`ShapeMismatch` and :class:`ProtocolError`; the transport maps
        those to ``error`` envelopes.
        """
        try:
            event = Event(kind)
        except ValueError:
            raise ProtocolError(f"unexpected inbound kind {kind!r}") from None
        submitter = str(body.get("submitter") or body.get("initiator") or "")
        if not submitter:
            raise ProtocolError("missing submitter")
        key = (s_id, submitter)
        with self._lock_for(key):
            if event is Event.SESSION_START:
                return self._on_start(key, body)
            if event is Event.AUDIT_REQUEST:
                return self._on_audit(key, body)
            return self._on_close(key, body)

    def _on_start(self, key: Key, body: dict) -> tuple[str, dict]:
        state = self.state_of(*key)
        new = transition(state, Event.SESSION_START)
        rec = SessionRecord(
            s_id=key[0],
            initiator=str(body.get("initiator", key[1])),
            peer=str(body.get("peer", "")),
            submitter=key[1],
            start_time=int(body.get("start_time") or now_ms()),
            state=new,
        )
        self.sessions[key] = rec
        self.decisions.pop(key, None)
        self._save(rec)
        return "ack", {"state": new.value}

    def _on_audit(self, key: Key, body: dict) -> tuple[str, dict]:
        rec = self.sessions.get(key)
        if rec is None:
            raise UnknownSession(f"no session {key[0]!r} for submitter {key[1]!r}")
        if key in self.decisions:
            # at-least-once delivery: answer with the recorded outcome
            return "audit_result", {"status": self.decisions[key], "replayed": True}
        transition(rec.state, Event.AUDIT_REQUEST)
        try:
            bundle = ProofBundle.from_parts(body["proof"], body["statement"], key[0])
        except KeyError as exc:
            raise ProtocolError(f"audit_request body missing {exc}") from None
        except (TypeError, AttributeError) as exc:
            raise ProtocolError(f"audit_request body: {exc}") from None
        proof_system._check_shape(self.crs, bundle.statement)  # ShapeMismatch before any state change

        prior = rec.state
        rec.state = SessionState.AUDIT_PENDING
        try:
            ok = proof_system.verify(self.crs, bundle)
        except MalformedProof as exc:
            log.info("audit %s: malformed proof (%s)", key, exc)
            ok = False
        except Exception:
            rec.state = prior
            raise
        ts = now_ms()
        if ok:
            a = AuditRecord(key[0], key[1], bundle.statement.counts,
                            tuple(str(h) for h in bundle.statement.hashes), ts,
                            int(body.get("filler_count", 0)))
            self.audit_log.append(a.to_dict())
            self.audits.append(a)
            status, rec.state = VERIFIED, SessionState.AUDIT_VERIFIED
        else:
            v = Violation(key[0], key[1], ts, INVALID_PROOF)
            self.violation_log.append(v.to_dict())
            self.violations.append(v)
            status, rec.state = REJECTED, SessionState.AUDIT_REJECTED
        rec.audit_status = status
        self.decisions[key] = status
        self._save(rec)
        return "audit_result", {"status": status, "replayed": False}

    def _on_close(self, key: Key, body: dict) -> tuple[str, dict]:
        rec = self.sessions.get(key)
        if rec is None:
            raise UnknownSession(f"no session {key[0]!r} for submitter {key[1]!r}")
        rec.state = transition(rec.state, Event.SESSION_CLOSE)
        rec.end_time = max(int(body.get("end_time") or now_ms()), rec.start_time)
        rec.msg_count = int(body.get("msg_count", rec.msg_count))
        self._save(rec)
        return "ack", {
            "state": rec.state.value,
            "stats": {"duration": rec.duration, "msg_count": rec.msg_count, "audit_status": rec.audit_status},
        }


# -- agent side ----------------------------------------------------------------

Sender = Callable[[str, str, dict], tuple[str, dict]]


@dataclass
class _Pending:
    kind: str
    s_id: str
    body: dict
    attempts: int = 0
    next_at: float = 0.0


class RetryQueue:
    """FIFO outbox with exponential backoff and at-least-once delivery.

    Once anything is queued, later envelopes queue behind it so the ASP sees
    each session's events in order.
    """

    def __init__(self, send: Sender, base_delay: float = 0.05, max_delay: float = 5.0,
                 on_reply: Callable[[str, str, dict], None] | None = None):
        self.send = send
        self.base_delay = base_delay
        self.max_delay = max_delay
        self.on_reply = on_reply
        self._q: deque[_Pending] = deque()
        self._lock = threading.RLock()

    def __len__(self) -> int:
        return len(self._q)

    def submit(self, kind: str, s_id: str, body: dict) -> tuple[str, dict] | None:
        with self._lock:
            if not self._q:
                try:
                    reply = self.send(kind, s_id, body)
                except AspUnreachable as exc:
                    log.warning("asp unreachable (%s); queueing %s for %s", exc, kind, s_id)
                else:
                    self._deliver(kind, s_id, reply)
                    return reply
            self._q.append(_Pending(kind, s_id, body, 1, time.monotonic() + self.base_delay))
            return None

    def _deliver(self, kind: str, s_id: str, reply: tuple[str, dict]) -> None:
        if self.on_reply is not None:
            self.on_reply(kind, s_id, reply)

    def flush(self, timeout: float | None = None) -> bool:
        """Retry queued envelopes in order; True once the queue is empty."""
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._lock:
            while self._q:
                item = self._q[0]
                wait = item.next_at - time.monotonic()
                if deadline is not None and time.monotonic() + max(wait, 0) > deadline:
                    return False
                if wait > 0:
                    time.sleep(wait)
                try:
                    reply = self.send(item.kind, item.s_id, item.body)
                except AspUnreachable:
                    item.attempts += 1
                    item.next_at = time.monotonic() + min(self.base_delay * 2 ** item.attempts, self.max_delay)
                    continue
                self._q.popleft()
                self._deliver(item.kind, item.s_id, reply)
            return True


@dataclass
class AgentSession:
    s_id: str
    peer: str
    start_time: int
    messages: list[AuditMessage] = field(default_factory=list)
    directions: list[str] = field(default_factory=list)
    end_time: int | None = None
    filler_count: int = 0
    msg_count: int = 0

    @property
    def active(self) -> bool:
        return self.end_time is None


# State of a spawned prover worker, set once by its initializer.
_WORKER_CRS: CrsBundle | None = None


def _worker_init(parts: tuple) -> None:
    global _WORKER_CRS
    _WORKER_CRS = CrsBundle(*parts)
    if _WORKER_CRS.backend_id == proof_system.GROTH16:
        _WORKER_CRS.pk()
    _WORKER_CRS.circuit()


def _worker_ready() -> bool:
    return _WORKER_CRS is not None


def _prove_job(raws: list[bytes], s_id: str) -> ProofBundle:
    crs = _WORKER_CRS
    msgs = [AuditMessage.from_raw(r, 0, crs.params.max_json, crs.params.max_type) for r in raws]
    w, x = synthesize_witness(crs.circuit(), msgs)
    return proof_system.prove(crs, x, w, s_id)


class Prover:
    """Runs proof generation off the communication path.

    ``mode="process"`` uses spawned worker processes: the native curve code
    holds the GIL, so proving on a thread would stall message handling, and
    its internal thread pool does not survive ``fork``.  Workers parse the
    proving key once at start-up and the constructor waits until they are
    ready.  ``"thread"`` and ``"inline"`` exist for tests and tiny setups.
    """

    def __init__(self, crs: CrsBundle, mode: str = "process", workers: int = 1):
        self.crs = crs
        self.mode = mode
        self._pool = None
        if mode == "process":
            parts = (crs.proving_key, crs.verification_key, crs.circuit_meta, crs.hash_params_id, crs.backend_id)
            self._pool = ProcessPoolExecutor(
                workers,
                mp_context=multiprocessing.get_context("spawn"),
                initializer=_worker_init,
                initargs=(parts,),
            )
            for f in [self._pool.submit(_worker_ready) for _ in range(workers)]:
                f.result()
        elif mode == "thread":
            self._pool = ThreadPoolExecutor(workers, thread_name_prefix="prover")
        elif mode != "inline":
            raise ValueError(f"unknown prover mode {mode!r}")

    def prove_now(self, messages: list[AuditMessage], s_id: str) -> ProofBundle:
        w, x = synthesize_witness(self.crs.circuit(), messages)
        return proof_system.prove(self.crs, x, w, s_id)

    def submit(self, messages: list[AuditMessage], s_id: str) -> Future:
        if self.mode == "process":
            return self._pool.submit(_prove_job, [m.raw for m in messages], s_id)
        if self.mode == "thread":
            return self._pool.submit(self.prove_now, messages, s_id)
        fut: Future = Future()
        try:
            fut.set_result(self.prove_now(messages, s_id))
        except Exception as exc:  # surfaced through the future like the pooled modes
            fut.set_exception(exc)
        return fut

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None


@dataclass
class AuditOutcome:
    s_id: str
    status: str | None
    bundle: ProofBundle | None
    prove_ms: float
    started_at: float  # time.monotonic() when proving began
    finished_at: float
    filler_count: int
    error: str | None = None


class Agent:
    """Records session traffic and audits it after the session ends.

    ``send`` delivers one envelope to the ASP and returns its reply; it must
    raise :class:`AspUnreachable` on transport failure so the envelope is
    queued for retry.  ``send=None`` runs without an ASP (proofs still made).
    """

    def __init__(
        self,
        agent_id: str,
        crs: CrsBundle,
        send: Sender | None = None,
        *,
        prover: Prover | None = None,
        clock: Callable[[], int] = now_ms,
        id_rng=None,
    ):
        self.agent_id = agent_id
        self.crs = crs
        self.clock = clock
        self.id_rng = id_rng
        self.prover = prover or Prover(crs, mode="inline")
        self.sessions: dict[str, AgentSession] = {}
        self.results: dict[str, str] = {}
        self.replies: list[tuple[str, str, tuple[str, dict]]] = []
        self._lock = threading.Lock()
        self.outbox = None if send is None else RetryQueue(send, on_reply=self._on_reply)

    @property
    def n(self) -> int:
        return self.crs.params.n

    @property
    def active_sessions(self) -> list[str]:
        return [s for s, sess in self.sessions.items() if sess.active]

    def _on_reply(self, kind: str, s_id: str, reply: tuple[str, dict]) -> None:
        self.replies.append((kind, s_id, reply))
        rkind, rbody = reply
        if rkind == "audit_result":
            self.results[s_id] = rbody.get("status")

    def _emit(self, kind: str, s_id: str, body: dict):
        if self.outbox is None:
            return None
        return self.outbox.submit(kind, s_id, {**body, "submitter": self.agent_id})

    def start_session(self, peer: str) -> str:
        ts = self.clock()
        s_id = generate_id(self.agent_id, peer, ts, self.id_rng)
        with self._lock:
            self.sessions[s_id] = AgentSession(s_id, peer, ts)
        self._emit("session_start", s_id, {"initiator": self.agent_id, "peer": peer, "start_time": ts})
        return s_id

    def _session(self, s_id: str) -> AgentSession:
        try:
            return self.sessions[s_id]
        except KeyError:
            raise SessionNotActive(f"unknown session {s_id!r}") from None

    def record_message(self, s_id: str, raw: bytes, direction: str = "sent") -> AuditMessage:
        """Parse and buffer one message; constant time, no proving and no I/O."""
        sess = self._session(s_id)
        if not sess.active:
            raise SessionNotActive(f"session {s_id!r} is closed")
        p = self.crs.params
        msg = AuditMessage.from_raw(raw, self.clock(), p.max_json, p.max_type)
        self.crs.table.index(msg.type_string)
        sess.messages.append(msg)
        sess.directions.append(direction)
        sess.msg_count += 1
        return msg

    def end_session(self, s_id: str, *, pad: bool = True) -> int:
        """Stop recording; with ``pad`` fill up to n with "ping" messages. Returns filler count."""
        sess = self._session(s_id)
        if not sess.active:
            raise SessionNotActive(f"session {s_id!r} already ended")
        if pad:
            while sess.msg_count < self.n:
                self.record_message(s_id, AuditMessage.of_type(FILLER_TYPE).raw, "filler")
                sess.filler_count += 1
        sess.end_time = self.clock()
        return sess.filler_count

    def _take_buffer(self, s_id: str) -> AgentSession:
        sess = self._session(s_id)
        if sess.active:
            self.end_session(s_id)
        if len(sess.messages) != self.n:
            raise WrongMessageCount(f"session has {len(sess.messages)} messages, circuit expects {self.n}")
        return sess

    def _finish(self, sess: AgentSession, bundle: ProofBundle) -> str | None:
        reply = self._emit("audit_request", sess.s_id, audit_request_body(bundle, sess.filler_count))
        sess.messages = []  # buffer cleared once the request is out
        self._emit("session_close", sess.s_id, {"end_time": sess.end_time, "msg_count": sess.msg_count})
        if reply is not None and reply[0] == "audit_result":
            return reply[1].get("status")
        return None

    def generate_audit(self, s_id: str) -> ProofBundle:
        """Prove the session synchronously, then send Audit-Request and Session-Close."""
        sess = self._take_buffer(s_id)
        try:
            bundle = self.prover.prove_now(list(sess.messages), s_id)
        except RelationUnsatisfied as exc:
            raise ProveFailure(str(exc)) from exc
        self._finish(sess, bundle)
        return bundle

    def audit_async(self, s_id: str) -> Future:
        """Background variant of :meth:`generate_audit`; resolves to an :class:`AuditOutcome`."""
        sess = self._take_buffer(s_id)
        started = time.monotonic()
        inner = self.prover.submit(list(sess.messages), s_id)
        outer: Future = Future()

        def done(f: Future) -> None:
            finished = time.monotonic()
            try:
                bundle = f.result()
            except ZkMcpError as exc:
                outer.set_result(AuditOutcome(s_id, None, None, (finished - started) * 1e3, started,
                                              finished, sess.filler_count, repr(exc)))
                return
            except BaseException as exc:  # noqa: BLE001 - forwarded to the caller
                outer.set_exception(exc)
                return
            try:
                status = self._finish(sess, bundle)
            except BaseException as exc:  # noqa: BLE001
                outer.set_exception(exc)
                return
            outer.set_result(AuditOutcome(s_id, status, bundle, (finished - started) * 1e3,
                                          started, finished, sess.filler_count))

        inner.add_done_callback(done)
        return outer

    def flush(self, timeout: float | None = None) -> bool:
        return True if self.outbox is None else self.outbox.flush(timeout)


def local_sender(asp: Asp) -> Sender:
    """In-process transport: errors come back as ``error`` replies like on the wire."""

    def send(kind: str, s_id: str, body: dict) -> tuple[str, dict]:
        try:
            return asp.handle(kind, s_id, body)
        except ZkMcpError as exc:
            return "error", {"code": error_code(exc), "message": str(exc)}

    return send


def error_code(exc: BaseException) -> str:
    if isinstance(exc, UnknownSession):
        return "unknown_session"
    if isinstance(exc, IllegalTransition):
        return "illegal_transition"
    if isinstance(exc, ShapeMismatch):
        return "shape"
    if isinstance(exc, ProtocolError):
        return "protocol"
    return "internal"

