"""Command line entry point ``zkmcp``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import bench, proof_system, transport
from .errors import ZkMcpError
from .messages import CircuitParams, TypeTable
from .proof_system import CrsBundle
from .protocol import Agent, Prover

log = logging.getLogger("zkmcp")

BACKEND_ALIASES = {"real": proof_system.GROTH16, "oracle": proof_system.ORACLE}


def _backend(name: str) -> str:
    return BACKEND_ALIASES.get(name, name)


def _n_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}") from None


def _table(path: str | None) -> TypeTable:
    return TypeTable() if path is None else TypeTable.load(path)


def _data_dir(arg: str | None) -> Path:
    return Path(arg or os.environ.get("ZKMCP_DATA_DIR") or "zkmcp-data")


def cmd_setup(args) -> int:
    crs = proof_system.setup(CircuitParams(args.n), _table(args.types), _backend(args.backend))
    out = crs.save(args.out)
    print(out)
    return 0


def cmd_asp_serve(args) -> int:
    transport.serve_asp(args.listen, args.crs, _data_dir(args.data), insecure=args.insecure,
                        max_workers=args.workers)
    return 0


def cmd_agent_run(args) -> int:
    crs = CrsBundle.load(args.crs)
    raws = [line.rstrip(b"\r\n") for line in Path(args.messages).read_bytes().splitlines() if line.strip()]
    with transport.AspClient(args.asp, timeout=args.timeout) as client:
        agent = Agent(args.agent_id, crs, client.sender(), prover=Prover(crs, "inline"))
        s_id = agent.start_session(args.peer)
        for raw in raws:
            agent.record_message(s_id, raw, "sent")
        filler = agent.end_session(s_id, pad=not args.no_filler)
        bundle = agent.generate_audit(s_id)
        if not agent.flush(timeout=args.timeout):
            log.error("ASP still unreachable; %d envelopes undelivered", len(agent.outbox))
            return 2
    result = {
        "s_id": s_id,
        "status": agent.results.get(s_id),
        "counts": list(bundle.statement.counts),
        "filler_count": filler,
        "proof_bytes": len(bundle.proof),
    }
    print(json.dumps(result))
    return 0 if result["status"] == "verified" else 1


def cmd_bench(args) -> int:
    report = bench.bench_circuit(args.n, _backend(args.backend), max_constraints=args.max_constraints)
    fmt = "json" if args.out.endswith(".json") else "csv"
    bench.emit_report(report, fmt, args.out)
    for row in report.rows:
        print(f"n={row.n:4d} constraints={row.constraints:7d} setup={row.setup_ms:9.1f}ms "
              f"prove={row.prove_ms:8.1f}ms verify={row.verify_ms:6.1f}ms")
    for s in report.skipped:
        print(f"n={s['n']:4d} skipped: {s['reason']}")
    return 0


def cmd_simulate(args) -> int:
    if args.crs:
        crs = CrsBundle.load(args.crs)
        bench.check_crs(crs, args.messages)
    else:
        crs = proof_system.setup(CircuitParams(args.messages), TypeTable(), _backend(args.backend))
    latency = args.profile if args.profile else args.latency_ms
    audit = {"on": True, "off": False, "both": "both"}[args.audit]
    report = bench.simulate_sessions(crs, args.sessions, latency, audit, seed=args.seed)
    fmt = "csv" if args.out.endswith(".csv") else "json"
    bench.emit_report(report, fmt, args.out)
    for row in report.rows:
        print(json.dumps({k: getattr(row, k) for k in bench.OVERHEAD_COLUMNS}))
    return 0


def cmd_fixtures_regen(args) -> int:
    from . import fixtures

    for path in fixtures.regenerate(Path(args.dir)):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zkmcp", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("setup", help="generate a CRS for one circuit size")
    s.add_argument("--n", type=int, default=8)
    s.add_argument("--types", help="JSON file {\"types\": [...]} (default: built-in table)")
    s.add_argument("--backend", default="real", help="real|oracle")
    s.add_argument("--out", default="crs")
    s.set_defaults(func=cmd_setup)

    asp = sub.add_parser("asp", help="audit service provider").add_subparsers(dest="asp_cmd", required=True)
    s = asp.add_parser("serve")
    s.add_argument("--listen", default="127.0.0.1:7878")
    s.add_argument("--crs", required=True)
    s.add_argument("--data", help="storage directory (default $ZKMCP_DATA_DIR)")
    s.add_argument("--insecure", action="store_true", help="accept the insecure-oracle backend")
    s.add_argument("--workers", type=int, default=32)
    s.set_defaults(func=cmd_asp_serve)

    agent = sub.add_parser("agent", help="audited agent").add_subparsers(dest="agent_cmd", required=True)
    s = agent.add_parser("run", help="record one session from a file and submit its audit")
    s.add_argument("--peer", required=True)
    s.add_argument("--asp", required=True)
    s.add_argument("--crs", required=True)
    s.add_argument("--messages", required=True, help="one raw message per line")
    s.add_argument("--agent-id", default="agent")
    s.add_argument("--no-filler", action="store_true")
    s.add_argument("--timeout", type=float, default=30.0)
    s.set_defaults(func=cmd_agent_run)

    s = sub.add_parser("bench", help="circuit scalability sweep")
    s.add_argument("--n", type=_n_list, default=[1, 2, 4, 8, 16, 32, 64, 128])
    s.add_argument("--backend", default="real")
    s.add_argument("--max-constraints", type=int, default=None)
    s.add_argument("--out", default="report.csv")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("simulate", help="paired audit on/off communication runs")
    s.add_argument("--sessions", type=int, default=1)
    s.add_argument("--messages", type=int, default=8)
    s.add_argument("--latency-ms", type=float, default=200.0)
    s.add_argument("--profile", choices=sorted(bench.PROFILES))
    s.add_argument("--audit", choices=("on", "off", "both"), default="both")
    s.add_argument("--crs")
    s.add_argument("--backend", default="real")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="overhead.json")
    s.set_defaults(func=cmd_simulate)

    fx = sub.add_parser("fixtures").add_subparsers(dest="fx_cmd", required=True)
    s = fx.add_parser("regen", help="rewrite the generated test fixtures")
    s.add_argument("--dir", default="tests/fixtures")
    s.set_defaults(func=cmd_fixtures_regen)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ZkMcpError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
