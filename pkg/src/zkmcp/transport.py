"""Newline-delimited JSON between agents and the ASP.

One envelope per line::

    {"body":{...},"kind":"ack","protocol_version":"zkmcp/1","s_id":"..."}

Field elements travel as decimal strings, proof payloads as base64.  A line
that cannot be decoded is answered with an ``error`` envelope and the
connection stays open.
"""

from __future__ import annotations

import json
import logging
import socket
import socketserver
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .errors import AspUnreachable, ProtocolError, RemoteError, ZkMcpError
from .proof_system import CrsBundle
from .protocol import Asp, Sender, error_code

log = logging.getLogger(__name__)

PROTOCOL_VERSION = "zkmcp/1"
MAX_LINE = 1 << 20
KINDS = ("session_start", "audit_request", "session_close", "ack", "audit_result", "error")
REQUEST_KINDS = KINDS[:3]


class BindFailure(ZkMcpError):
    """The service could not listen on the requested address."""


class DecodeError(ProtocolError):
    def __init__(self, code: str, message: str, s_id: str = ""):
        super().__init__(message)
        self.code = code
        self.s_id = s_id


@dataclass(frozen=True)
class WireEnvelope:
    kind: str
    s_id: str
    body: dict = field(default_factory=dict)
    protocol_version: str = PROTOCOL_VERSION

    def encode(self) -> bytes:
        line = json.dumps(
            {"kind": self.kind, "s_id": self.s_id, "body": self.body, "protocol_version": self.protocol_version},
            separators=(",", ":"),
            sort_keys=True,
            ensure_ascii=True,
        ).encode("ascii")
        if len(line) + 1 > MAX_LINE:
            raise ProtocolError(f"envelope of {len(line)} bytes exceeds the line limit")
        return line + b"\n"

    @classmethod
    def decode(cls, line: bytes | str) -> "WireEnvelope":
        if isinstance(line, str):
            line = line.encode("utf-8")
        if len(line) > MAX_LINE:
            raise DecodeError("too_long", f"line of {len(line)} bytes")
        try:
            obj = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DecodeError("decode", f"undecodable line: {exc}") from None
        if not isinstance(obj, dict):
            raise DecodeError("decode", "envelope must be a JSON object")
        s_id = obj.get("s_id")
        s_id = s_id if isinstance(s_id, str) else ""
        version = obj.get("protocol_version")
        if version != PROTOCOL_VERSION:
            raise DecodeError("version", f"unsupported protocol_version {version!r}", s_id)
        kind, body = obj.get("kind"), obj.get("body", {})
        if kind not in KINDS or not isinstance(body, dict) or not isinstance(obj.get("s_id"), str):
            raise DecodeError("schema", "envelope needs kind, s_id (string) and body (object)", s_id)
        return cls(kind, s_id, body, version)

    def reply(self, kind: str, body: dict) -> "WireEnvelope":
        return WireEnvelope(kind, self.s_id, body)


def parse_address(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"expected HOST:PORT, got {addr!r}")
    return host.strip("[]"), int(port)


def dispatch(asp: Asp, env: WireEnvelope) -> WireEnvelope:
    if env.kind not in REQUEST_KINDS:
        return env.reply("error", {"code": "schema", "message": f"{env.kind} is a reply kind"})
    try:
        kind, body = asp.handle(env.kind, env.s_id, env.body)
    except ZkMcpError as exc:
        log.info("%s %s rejected: %s", env.kind, env.s_id, exc)
        return env.reply("error", {"code": error_code(exc), "message": str(exc)})
    return env.reply(kind, body)


class _Handler(socketserver.StreamRequestHandler):
    server: "AspServer"

    def handle(self) -> None:
        while True:
            try:
                line = self.rfile.readline(MAX_LINE + 1)
            except OSError:
                return
            if not line:
                return
            if len(line) > MAX_LINE:
                self._send(WireEnvelope("error", "", {"code": "too_long", "message": "line limit exceeded"}))
                return  # cannot resynchronise inside an oversized line
            if not line.strip():
                continue
            try:
                env = WireEnvelope.decode(line)
            except DecodeError as exc:
                log.warning("bad line from %s: %s", self.client_address, exc)
                reply = WireEnvelope("error", exc.s_id, {"code": exc.code, "message": str(exc)})
            else:
                reply = dispatch(self.server.asp, env)
            if not self._send(reply):
                return

    def _send(self, env: WireEnvelope) -> bool:
        try:
            self.wfile.write(env.encode())
            self.wfile.flush()
            return True
        except OSError:
            return False


class AspServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], asp: Asp, max_workers: int = 32):
        self.asp = asp
        self._slots = threading.BoundedSemaphore(max_workers)
        try:
            super().__init__(address, _Handler)
        except OSError as exc:
            raise BindFailure(f"cannot listen on {address}: {exc}") from exc

    @property
    def address(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def process_request(self, request, client_address):
        self._slots.acquire()
        super().process_request(request, client_address)

    def process_request_thread(self, request, client_address):
        try:
            super().process_request_thread(request, client_address)
        finally:
            self._slots.release()

    def start(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, name="asp-server", daemon=True)
        t.start()
        return t

    def stop(self) -> None:
        self.shutdown()
        self.server_close()


def serve_asp(
    listen: str,
    crs_path: str | Path,
    storage_dir: str | Path,
    *,
    insecure: bool = False,
    max_workers: int = 32,
    background: bool = False,
) -> AspServer:
    """Load the verifier side of the CRS, replay storage and serve until interrupted."""
    crs = CrsBundle.load(crs_path, verifier_only=True)
    asp = Asp.open(crs, storage_dir, insecure=insecure)
    server = AspServer(parse_address(listen), asp, max_workers)
    log.info("asp listening on %s (circuit %s, backend %s)", server.address, crs.circuit_id, crs.backend_id)
    if background:
        server.start()
        return server
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        log.info("interrupted")
    finally:
        server.server_close()
    return server


class AspClient:
    """One persistent connection; requests are answered strictly in order."""

    def __init__(self, address: str, timeout: float = 10.0):
        self.address = address
        self.timeout = timeout
        self._sock: socket.socket | None = None
        self._rfile = None
        self._lock = threading.Lock()

    def _connect(self) -> None:
        try:
            self._sock = socket.create_connection(parse_address(self.address), timeout=self.timeout)
        except ConnectionRefusedError as exc:
            raise AspUnreachable(f"connection refused by {self.address}") from exc
        except (socket.timeout, OSError) as exc:
            raise AspUnreachable(f"{self.address}: {exc}") from exc
        self._rfile = self._sock.makefile("rb")

    def close(self) -> None:
        with self._lock:
            self._drop()

    def _drop(self) -> None:
        if self._sock is not None:
            try:
                self._rfile.close()
                self._sock.close()
            except OSError:
                pass
        self._sock = self._rfile = None

    def request(self, env: WireEnvelope) -> WireEnvelope:
        data = env.encode()
        with self._lock:
            if self._sock is None:
                self._connect()
            try:
                self._sock.sendall(data)
                line = self._rfile.readline(MAX_LINE + 1)
            except (socket.timeout, OSError) as exc:
                self._drop()
                raise AspUnreachable(f"{self.address}: {exc}") from exc
            if not line:
                self._drop()
                raise AspUnreachable(f"{self.address} closed the connection")
        reply = WireEnvelope.decode(line)
        if reply.s_id != env.s_id:
            raise ProtocolError(f"reply for {reply.s_id!r} while waiting on {env.s_id!r}")
        return reply

    def sender(self) -> Sender:
        def send(kind: str, s_id: str, body: dict) -> tuple[str, dict]:
            reply = self.request(WireEnvelope(kind, s_id, body))
            return reply.kind, reply.body

        return send

    def __enter__(self) -> "AspClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def client_submit(envelope: WireEnvelope, address: str, timeout: float = 10.0) -> WireEnvelope:
    """Send one envelope on a fresh connection; ``error`` replies raise :class:`RemoteError`."""
    with AspClient(address, timeout) as client:
        reply = client.request(envelope)
    if reply.kind == "error":
        raise RemoteError(reply.body.get("code", "unknown"), reply.body.get("message", ""))
    return reply
