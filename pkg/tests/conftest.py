from __future__ import annotations

import json
import random
from pathlib import Path

import pytest

from zkmcp import proof_system
from zkmcp.circuit import synthesize_witness
from zkmcp.messages import AuditMessage, CircuitParams, TypeTable

FIXTURES = Path(__file__).parent / "fixtures"

_ACCEPTANCE: list[tuple[str, bool, str]] = []


def load_fixture(name: str):
    return json.loads((FIXTURES / name).read_text(encoding="utf-8"))


@pytest.fixture(scope="session")
def table() -> TypeTable:
    return TypeTable()


class CrsCache:
    """One real setup per circuit size for the whole run."""

    def __init__(self, table: TypeTable):
        self.table = table
        self._real: dict[int, proof_system.CrsBundle] = {}
        self._oracle: dict[int, proof_system.CrsBundle] = {}

    def real(self, n: int) -> proof_system.CrsBundle:
        if n not in self._real:
            self._real[n] = proof_system.setup(CircuitParams(n), self.table, rng=random.Random(1000 + n))
        return self._real[n]

    def oracle(self, n: int) -> proof_system.CrsBundle:
        if n not in self._oracle:
            self._oracle[n] = proof_system.setup(CircuitParams(n), self.table, proof_system.ORACLE)
        return self._oracle[n]


@pytest.fixture(scope="session")
def crs_cache(table) -> CrsCache:
    return CrsCache(table)


def random_messages(rng: random.Random, n: int, table: TypeTable) -> list[AuditMessage]:
    return [AuditMessage.of_type(rng.choice(table.entries), 0) for _ in range(n)]


@pytest.fixture(scope="session")
def honest_n8(crs_cache, table):
    """100 random honest n=8 sessions with real proofs: (messages, witness, bundle)."""
    crs = crs_cache.real(8)
    rng = random.Random(8008)
    out = []
    for k in range(100):
        msgs = random_messages(rng, 8, table)
        w, x = synthesize_witness(crs.circuit(), msgs)
        bundle = proof_system.prove(crs, x, w, s_id=f"s{k}", rng=random.Random(rng.getrandbits(64)))
        out.append((msgs, w, bundle))
    return out


@pytest.fixture
def acceptance(request):
    """Record one acceptance line; the test body sets ``detail``."""
    rec = {"detail": ""}
    yield rec
    name = request.node.get_closest_marker("criterion").args[0]
    failed = getattr(request.node, "rep_call", None) is None or request.node.rep_call.failed
    _ACCEPTANCE.append((name, not failed, rec["detail"]))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion implemented by the test")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else ""))
