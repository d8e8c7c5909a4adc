from __future__ import annotations

import csv
import json

import pytest

from conftest import FIXTURES
from zkmcp import cli, fixtures, transport
from zkmcp.messages import AuditMessage


def _out(capsys):
    return capsys.readouterr().out.strip().splitlines()


def test_setup_writes_crs_dir(tmp_path, capsys):
    assert cli.main(["setup", "--n", "2", "--backend", "oracle", "--out", str(tmp_path / "crs")]) == 0
    (line,) = _out(capsys)
    assert {p.name for p in (tmp_path / "crs").iterdir()} == {line.rsplit("/", 1)[-1]}


def test_bench_csv(tmp_path, capsys):
    out = tmp_path / "r.csv"
    assert cli.main(["bench", "--n", "1,2", "--backend", "oracle", "--out", str(out)]) == 0
    assert [int(r["n"]) for r in csv.DictReader(out.open())] == [1, 2]
    assert len(_out(capsys)) == 2


def test_simulate_json(tmp_path, capsys):
    out = tmp_path / "o.json"
    rc = cli.main(["simulate", "--messages", "2", "--latency-ms", "1", "--backend", "oracle",
                   "--audit", "on", "--out", str(out)])
    assert rc == 0
    row = json.loads(out.read_text())["rows"][0]
    assert row["verified"] == 1 and row["n"] == 2


def test_simulate_crs_mismatch(tmp_path):
    cli.main(["setup", "--n", "2", "--backend", "oracle", "--out", str(tmp_path / "crs")])
    assert cli.main(["simulate", "--messages", "4", "--crs", str(tmp_path / "crs"),
                     "--out", str(tmp_path / "o.json")]) == 1


def test_fixtures_regen_matches_checked_in(tmp_path):
    assert cli.main(["fixtures", "regen", "--dir", str(tmp_path)]) == 0
    name = fixtures.TRACE_FILE
    assert (tmp_path / name).read_bytes() == (FIXTURES / name).read_bytes()


def test_bad_n_list():
    with pytest.raises(SystemExit):
        cli.main(["bench", "--n", "1,x"])


def test_agent_run_against_server(tmp_path, capsys):
    cli.main(["setup", "--n", "4", "--backend", "oracle", "--out", str(tmp_path / "crs")])
    capsys.readouterr()
    srv = transport.serve_asp("127.0.0.1:0", tmp_path / "crs", tmp_path / "data", insecure=True, background=True)
    try:
        msgs = tmp_path / "msgs.txt"
        msgs.write_bytes(b"\n".join(AuditMessage.of_type(t).raw for t in ("request", "response")) + b"\n")
        rc = cli.main(["agent", "run", "--peer", "bob", "--asp", srv.address, "--crs", str(tmp_path / "crs"),
                       "--messages", str(msgs)])
        result = json.loads(_out(capsys)[-1])
        assert rc == 0 and result["status"] == "verified"
        assert result["filler_count"] == 2 and result["counts"][:2] == [1, 1] and result["counts"][4] == 2
        rc = cli.main(["agent", "run", "--peer", "bob", "--asp", srv.address, "--crs", str(tmp_path / "crs"),
                       "--messages", str(msgs), "--no-filler"])
        assert rc == 1
    finally:
        srv.stop()
