"""Circuit scalability sweep and paired communication-overhead simulation.

Agents are scripted: each message costs an injected latency drawn from a
profile instead of a model call.  Reports are plain CSV or JSON with a fixed
column order.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import random
import resource
import statistics
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

from . import proof_system
from .circuit import build_circuit, synthesize_witness
from .errors import CrsMismatch, ZkMcpError
from .messages import AuditMessage, CircuitParams, TypeTable, count_types
from .proof_system import CrsBundle
from .protocol import Agent, Asp, Prover, local_sender

log = logging.getLogger(__name__)


class OutOfBudget(ZkMcpError):
    """A bench row would exceed the configured budget and was skipped."""


class IoFailure(ZkMcpError):
    """A report could not be written."""


# -- memory sampling -----------------------------------------------------------

_PAGE = os.sysconf("SC_PAGE_SIZE") if hasattr(os, "sysconf") else 4096


def _rss_bytes() -> int:
    try:
        with open("/proc/self/statm") as fh:
            return int(fh.read().split()[1]) * _PAGE
    except OSError:
        return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024


class PeakRss:
    """Peak resident set over a ``with`` block, sampled every ``interval`` seconds."""

    def __init__(self, interval: float = 0.05):
        self.interval = interval
        self.peak = 0
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def _run(self) -> None:
        while not self._stop.is_set():
            self.peak = max(self.peak, _rss_bytes())
            self._stop.wait(self.interval)

    def __enter__(self) -> "PeakRss":
        self.peak = _rss_bytes()
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self._stop.set()
        self._thread.join()
        self.peak = max(self.peak, _rss_bytes())


# -- scripted sessions ---------------------------------------------------------


def random_session(rng: random.Random, n: int, table: TypeTable) -> list[AuditMessage]:
    return [AuditMessage.of_type(rng.choice(table.entries), 0) for _ in range(n)]


# -- circuit sweep -------------------------------------------------------------


@dataclass
class BenchRow:
    n: int
    setup_ms: float
    prove_ms: float
    verify_ms: float
    peak_mem_setup: int
    peak_mem_prove: int
    constraints: int
    wires: int
    proof_bytes: int
    vk_bytes: int
    pk_bytes: int
    private_input_count: int
    public_output_count: int
    constraints_per_sec: float


BENCH_COLUMNS = [f.name for f in fields(BenchRow)]


@dataclass
class BenchReport:
    backend: str
    rows: list[BenchRow] = field(default_factory=list)
    skipped: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"backend": self.backend, "rows": [asdict(r) for r in self.rows], "skipped": self.skipped}

    @classmethod
    def from_dict(cls, d: dict) -> "BenchReport":
        return cls(d["backend"], [BenchRow(**r) for r in d["rows"]], list(d.get("skipped", [])))

    def validate(self) -> None:
        ns = [r.n for r in self.rows]
        if ns != sorted(set(ns)):
            raise ValueError("rows must be strictly increasing in n")
        for r in self.rows:
            bad = [c for c in BENCH_COLUMNS if not getattr(r, c) > 0]
            if bad:
                raise ValueError(f"n={r.n}: non-positive {bad}")


def constraint_counts(n_list: Sequence[int], table: TypeTable | None = None) -> dict[int, int]:
    table = table or TypeTable()
    return {n: build_circuit(CircuitParams(n), table).constraint_count for n in n_list}


def bench_circuit(
    n_list: Sequence[int],
    backend: str = proof_system.GROTH16,
    *,
    table: TypeTable | None = None,
    max_constraints: int | None = None,
    seed: int = 0,
    repeats: int = 1,
) -> BenchReport:
    """Fresh setup, honest prove and verify per n; rows run serially.

    With ``repeats > 1`` prove and verify are timed that many times and the
    fastest run is reported.
    """
    table = table or TypeTable()
    rng = random.Random(seed)
    report = BenchReport(backend)
    for n in sorted(set(n_list)):
        if n < 1:
            raise ValueError(f"n must be positive, got {n}")
        params = CircuitParams(n)
        cs = build_circuit(params, table)
        if max_constraints is not None and cs.constraint_count > max_constraints:
            reason = f"{cs.constraint_count} constraints > budget {max_constraints}"
            log.warning("skipping n=%d: %s", n, reason)
            report.skipped.append({"n": n, "reason": reason})
            continue
        msgs = random_session(rng, n, table)

        with PeakRss() as mem_setup:
            t0 = time.perf_counter()
            crs = proof_system.setup(params, table, backend, random.Random(rng.getrandbits(64)))
            setup_ms = (time.perf_counter() - t0) * 1e3
        w, x = synthesize_witness(cs, msgs)
        prove_ms = verify_ms = math.inf
        with PeakRss() as mem_prove:
            for _ in range(max(1, repeats)):
                t0 = time.perf_counter()
                bundle = proof_system.prove(crs, x, w)
                prove_ms = min(prove_ms, (time.perf_counter() - t0) * 1e3)
        for _ in range(max(1, repeats)):
            t0 = time.perf_counter()
            ok = proof_system.verify(crs, bundle)
            verify_ms = min(verify_ms, (time.perf_counter() - t0) * 1e3)
            if not ok:
                raise RuntimeError(f"honest proof failed to verify at n={n}")

        row = BenchRow(
            n=n,
            setup_ms=round(setup_ms, 3),
            prove_ms=round(prove_ms, 3),
            verify_ms=round(verify_ms, 3),
            peak_mem_setup=mem_setup.peak,
            peak_mem_prove=mem_prove.peak,
            constraints=cs.constraint_count,
            wires=cs.wire_count,
            proof_bytes=len(bundle.proof),
            vk_bytes=max(len(crs.verification_key), 1),
            pk_bytes=max(len(crs.proving_key), 1),
            private_input_count=cs.wire_count - 1 - cs.num_public,
            public_output_count=cs.num_public,
            constraints_per_sec=round(cs.constraint_count / (prove_ms / 1e3), 3),
        )
        log.info("n=%d setup %.0f ms prove %.0f ms verify %.1f ms", n, setup_ms, prove_ms, verify_ms)
        report.rows.append(row)
    return report


# -- overhead simulation -------------------------------------------------------


@dataclass(frozen=True)
class LatencyProfile:
    name: str
    median_ms: float
    sigma: float = 0.0  # lognormal shape; 0 gives a constant delay

    def sample(self, rng: random.Random) -> float:
        if self.sigma <= 0:
            return self.median_ms
        return self.median_ms * math.exp(rng.gauss(0.0, self.sigma))


# Placeholder shapes only; nothing here is a measurement of any model.
PROFILES = {
    "deepseek-v3-like": LatencyProfile("deepseek-v3-like", 1800.0, 0.35),
    "gpt-4.1mini-like": LatencyProfile("gpt-4.1mini-like", 900.0, 0.30),
    "gpt-3.5-turbo-like": LatencyProfile("gpt-3.5-turbo-like", 600.0, 0.25),
}


def profile(name_or_ms: str | float) -> LatencyProfile:
    if isinstance(name_or_ms, (int, float)):
        return LatencyProfile(f"fixed-{name_or_ms:g}ms", float(name_or_ms))
    if name_or_ms in PROFILES:
        return PROFILES[name_or_ms]
    raise ValueError(f"unknown latency profile {name_or_ms!r}; known: {sorted(PROFILES)}")


@dataclass
class SessionTiming:
    s_id: str
    per_message_ms: list[float]
    comm_start: float
    comm_end: float
    counts: list[int]
    status: str | None = None
    prove_ms: float = 0.0
    verify_ms: float = 0.0
    prove_started: float | None = None
    filler_count: int = 0
    record_calls: list[int] = field(default_factory=list)

    @property
    def comm_ms(self) -> float:
        return (self.comm_end - self.comm_start) * 1e3


@dataclass
class OverheadRow:
    model_profile: str
    n: int
    comm_ms_baseline: float
    comm_ms_with_audit: float
    prove_ms: float
    verify_ms: float
    overhead_pct: float
    verify_pct: float  # verification time relative to baseline communication
    audit_total_pct: float  # prove + verify relative to baseline communication
    per_message_ms_baseline: float
    per_message_ms_with_audit: float
    sessions: int
    verified: int
    proofs_after_shutdown: bool


OVERHEAD_COLUMNS = [f.name for f in fields(OverheadRow)]


@dataclass
class OverheadReport:
    rows: list[OverheadRow] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"rows": [asdict(r) for r in self.rows]}

    @classmethod
    def from_dict(cls, d: dict) -> "OverheadReport":
        return cls([OverheadRow(**r) for r in d["rows"]])


class _TimedAsp:
    """In-process ASP transport that also records how long each verify took."""

    def __init__(self, asp: Asp):
        self.send = local_sender(asp)
        self.verify_ms: dict[str, float] = {}
        self._lock = threading.Lock()

    def __call__(self, kind: str, s_id: str, body: dict):
        t0 = time.perf_counter()
        reply = self.send(kind, s_id, body)
        if kind == "audit_request":
            with self._lock:
                self.verify_ms[s_id] = (time.perf_counter() - t0) * 1e3
        return reply


def run_sessions(
    crs: CrsBundle,
    sessions: int,
    latency: LatencyProfile,
    *,
    audit: bool,
    seed: int = 0,
    prover: Prover | None = None,
    asp: Asp | None = None,
    sender: Callable | None = None,
    message_count: int | None = None,
    clock: Callable[[], int] | None = None,
) -> list[SessionTiming]:
    """Run ``sessions`` scripted sessions concurrently; returns per-session timings.

    The communication phase (latency + local recording) is measured the same
    way with audit on or off; with audit off nothing is recorded or proven.
    The message script and every latency sample depend only on ``seed``.
    """
    n = crs.params.n
    k = n if message_count is None else message_count
    rng = random.Random(seed)
    scripts = [
        (random_session(rng, k, crs.table), [latency.sample(rng) / 1e3 for _ in range(k)])
        for _ in range(sessions)
    ]
    timed = None
    agent = None
    if audit:
        if sender is None:
            asp = asp or Asp(crs, insecure=True)
            timed = _TimedAsp(asp)
            sender = timed
        kwargs = {} if clock is None else {"clock": clock}
        agent = Agent("agent-a", crs, sender, prover=prover or Prover(crs, "process"), **kwargs)

    def one(idx: int):
        msgs, delays = scripts[idx]
        s_id = agent.start_session("agent-b") if agent else f"baseline-{idx}"
        per = []
        calls = []
        t_start = time.perf_counter()
        for m, d in zip(msgs, delays):
            t0 = time.perf_counter()
            time.sleep(d)  # the remote side "thinks"
            if agent:
                calls.append(agent.record_message(s_id, m.raw, "received").timestamp)
            per.append((time.perf_counter() - t0) * 1e3)
        t_end = time.perf_counter()
        timing = SessionTiming(s_id, per, t_start, t_end, count_types(msgs, crs.table), record_calls=calls)
        fut = agent.audit_async(s_id) if agent else None
        return timing, fut

    with ThreadPoolExecutor(max(1, sessions)) as pool:
        results = list(pool.map(one, range(sessions)))

    out = []
    for timing, fut in results:
        if fut is not None:
            oc = fut.result()
            if oc.error:
                raise RuntimeError(f"audit of {timing.s_id} failed: {oc.error}")
            timing.status = oc.status
            timing.prove_ms = oc.prove_ms
            timing.prove_started = oc.started_at
            timing.filler_count = oc.filler_count
            if oc.bundle is not None and list(oc.bundle.statement.counts) != timing.counts:
                # only possible when filler was appended
                timing.counts = list(oc.bundle.statement.counts)
            if timing.status is None and oc.bundle is not None and agent is not None:
                agent.flush(timeout=30)
                timing.status = agent.results.get(timing.s_id)
        if timed is not None:
            timing.verify_ms = timed.verify_ms.get(timing.s_id, 0.0)
        out.append(timing)
    return out


def simulate_sessions(
    crs: CrsBundle,
    sessions: int = 1,
    latency: LatencyProfile | str | float = 200.0,
    audit: bool | str = "both",
    *,
    seed: int = 0,
    prover_mode: str = "process",
) -> OverheadReport:
    """Paired runs with identical scripts: audit off (baseline) then on.

    ``audit=False`` or ``True`` runs only that arm; the missing arm is
    reported as zeros.
    """
    prof = latency if isinstance(latency, LatencyProfile) else profile(latency)
    arms = {"both": (False, True), True: (True,), False: (False,), "on": (True,), "off": (False,)}[audit]
    runs: dict[bool, list[SessionTiming]] = {}
    prover = None
    try:
        for arm in arms:
            if arm and prover is None:
                prover = Prover(crs, prover_mode)
            runs[arm] = run_sessions(crs, sessions, prof, audit=arm, seed=seed, prover=prover)
    finally:
        if prover is not None:
            prover.close()
    return OverheadReport([_overhead_row(prof, crs.params.n, runs.get(False), runs.get(True))])


def _mean(xs) -> float:
    xs = list(xs)
    return statistics.fmean(xs) if xs else 0.0


def _overhead_row(prof: LatencyProfile, n: int, base, on) -> OverheadRow:
    comm_base = _mean(t.comm_ms for t in base) if base else 0.0
    comm_on = _mean(t.comm_ms for t in on) if on else 0.0
    pm_base = _mean(x for t in base for x in t.per_message_ms) if base else 0.0
    pm_on = _mean(x for t in on for x in t.per_message_ms) if on else 0.0
    prove = _mean(t.prove_ms for t in on) if on else 0.0
    verify = _mean(t.verify_ms for t in on) if on else 0.0

    def pct(x: float) -> float:
        return round(x / comm_base * 100, 4) if comm_base else 0.0

    return OverheadRow(
        model_profile=prof.name,
        n=n,
        comm_ms_baseline=round(comm_base, 3),
        comm_ms_with_audit=round(comm_on, 3),
        prove_ms=round(prove, 3),
        verify_ms=round(verify, 3),
        overhead_pct=pct(comm_on - comm_base) if base and on else 0.0,
        verify_pct=pct(verify),
        audit_total_pct=pct(prove + verify),
        per_message_ms_baseline=round(pm_base, 3),
        per_message_ms_with_audit=round(pm_on, 3),
        sessions=len(on or base or []),
        verified=sum(1 for t in (on or []) if t.status == "verified"),
        proofs_after_shutdown=all(t.prove_started is not None and t.prove_started >= t.comm_end for t in (on or [])),
    )


def check_crs(crs: CrsBundle, n: int) -> None:
    if crs.params.n != n:
        raise CrsMismatch(f"crs is for n={crs.params.n}, simulation wants n={n}")


# -- reports -------------------------------------------------------------------


def emit_report(report: BenchReport | OverheadReport, fmt: str, path: str | Path) -> Path:
    """Write CSV (fixed header, header-only when empty) or JSON."""
    path = Path(path)
    columns = BENCH_COLUMNS if isinstance(report, BenchReport) else OVERHEAD_COLUMNS
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if fmt == "json":
            path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        elif fmt == "csv":
            with open(path, "w", newline="", encoding="utf-8") as fh:
                wr = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
                wr.writeheader()
                for row in report.rows:
                    wr.writerow(asdict(row))
        else:
            raise ValueError(f"unknown report format {fmt!r}")
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    return path


def load_report(path: str | Path) -> BenchReport | OverheadReport:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    return BenchReport.from_dict(d) if "backend" in d else OverheadReport.from_dict(d)
