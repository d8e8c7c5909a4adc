"""Canonical audit-message envelope, the known-type table, and plaintext counting.

Every audited message has the exact byte layout ``{"type": "<type>"}``: a
10-byte prefix, the type string, and a 2-byte suffix.  The circuit checks
this layout at fixed byte positions, so nothing here does general JSON
parsing.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import (
    IllegalByte,
    InvalidParams,
    MalformedEnvelope,
    TooLong,
    TypeTooLong,
    UnknownType,
)

PREFIX = b'{"type": "'
SUFFIX = b'"}'
OVERHEAD = len(PREFIX) + len(SUFFIX)  # 12

MAX_JSON = 64
MAX_TYPE = 20
NUM_TYPES = 8

DEFAULT_TYPES = (
    "request",
    "response",
    "notification",
    "error",
    "ping",
    "progress",
    "cancelled",
    "result",
)

_FORBIDDEN = frozenset(b'"}')


@dataclass(frozen=True)
class CircuitParams:
    n: int
    max_json: int = MAX_JSON
    max_type: int = MAX_TYPE
    num_types: int = NUM_TYPES

    def __post_init__(self):
        if self.n < 1:
            raise InvalidParams(f"n must be >= 1, got {self.n}")
        if self.max_type < 1 or self.num_types < 1:
            raise InvalidParams("max_type and num_types must be positive")
        if OVERHEAD + self.max_type > self.max_json:
            raise InvalidParams(
                f"envelope of a {self.max_type}-byte type does not fit in {self.max_json} bytes"
            )
        # three 31-byte limbs plus total_len must fit a width-5 Poseidon
        if self.max_json > 93:
            raise InvalidParams("max_json above 93 bytes needs more than three hash limbs")

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "max_json": self.max_json,
            "max_type": self.max_type,
            "num_types": self.num_types,
        }


def _check_type_bytes(t: bytes, max_type: int) -> None:
    if not 1 <= len(t) <= max_type:
        raise TypeTooLong(f"type length {len(t)} outside 1..{max_type}")
    for b in t:
        if b < 0x20 or b > 0x7E or b in _FORBIDDEN:
            raise IllegalByte(f"byte {b:#04x} not allowed in a type string")


def _as_bytes(t: str | bytes) -> bytes:
    if isinstance(t, str):
        try:
            return t.encode("ascii")
        except UnicodeEncodeError as exc:
            raise IllegalByte(f"non-ASCII type string {t!r}") from exc
    return bytes(t)


@dataclass(frozen=True)
class TypeTable:
    """Ordered known types; position ``j`` is slot ``j`` of the counts vector."""

    entries: tuple[str, ...] = DEFAULT_TYPES
    max_type: int = MAX_TYPE

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if len(set(self.entries)) != len(self.entries):
            raise InvalidParams("type table entries must be distinct")
        for e in self.entries:
            try:
                _check_type_bytes(_as_bytes(e), self.max_type)
            except (TypeTooLong, IllegalByte) as exc:
                raise InvalidParams(f"bad type table entry {e!r}: {exc}") from exc

    def __len__(self) -> int:
        return len(self.entries)

    def index(self, type_string: str | bytes) -> int:
        key = type_string.decode("ascii") if isinstance(type_string, bytes) else type_string
        try:
            return self.entries.index(key)
        except ValueError:
            raise UnknownType(f"type {key!r} is not in the type table") from None

    def encoded(self) -> list[bytes]:
        return [e.encode("ascii") for e in self.entries]

    def digest(self) -> str:
        blob = json.dumps({"types": list(self.entries)}, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @classmethod
    def load(cls, path: str | Path, max_type: int = MAX_TYPE, num_types: int = NUM_TYPES) -> "TypeTable":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        types = doc.get("types") if isinstance(doc, dict) else None
        if not isinstance(types, list) or not all(isinstance(t, str) for t in types):
            raise InvalidParams(f"{path}: expected {{\"types\": [str, ...]}}")
        if len(types) != num_types:
            raise InvalidParams(f"{path}: expected {num_types} types, got {len(types)}")
        return cls(tuple(types), max_type=max_type)


def canonicalize(type_string: str | bytes, max_type: int = MAX_TYPE) -> bytes:
    t = _as_bytes(type_string)
    _check_type_bytes(t, max_type)
    return PREFIX + t + SUFFIX


def extract_type(raw: bytes, max_json: int = MAX_JSON, max_type: int = MAX_TYPE) -> bytes:
    """Inverse of :func:`canonicalize`; trailing zero padding is tolerated."""
    if len(raw) > max_json:
        raise MalformedEnvelope(f"message of {len(raw)} bytes exceeds {max_json}")
    body = bytes(raw).rstrip(b"\x00")
    if not body.startswith(PREFIX) or not body.endswith(SUFFIX) or len(body) < OVERHEAD:
        raise MalformedEnvelope("not a canonical type envelope")
    inner = body[len(PREFIX) : len(body) - len(SUFFIX)]
    try:
        _check_type_bytes(inner, max_type)
    except (TypeTooLong, IllegalByte) as exc:
        raise MalformedEnvelope(str(exc)) from exc
    return inner


def pad_message(raw: bytes, length: int = MAX_JSON) -> bytes:
    if len(raw) > length:
        raise TooLong(f"message of {len(raw)} bytes exceeds {length}")
    return bytes(raw) + b"\x00" * (length - len(raw))


def now_ms() -> int:
    return time.time_ns() // 1_000_000


@dataclass(frozen=True)
class AuditMessage:
    raw: bytes
    type_string: bytes
    timestamp: int = field(default=0, compare=False)

    @property
    def type_len(self) -> int:
        return len(self.type_string)

    @property
    def total_len(self) -> int:
        return len(self.raw)

    @classmethod
    def of_type(cls, type_string: str | bytes, timestamp: int | None = None,
                max_type: int = MAX_TYPE) -> "AuditMessage":
        raw = canonicalize(type_string, max_type)
        return cls(raw, raw[len(PREFIX) : -len(SUFFIX)], now_ms() if timestamp is None else timestamp)

    @classmethod
    def from_raw(cls, raw: bytes, timestamp: int | None = None, max_json: int = MAX_JSON,
                 max_type: int = MAX_TYPE) -> "AuditMessage":
        t = extract_type(raw, max_json, max_type)
        return cls(PREFIX + t + SUFFIX, t, now_ms() if timestamp is None else timestamp)

    def padded(self, length: int = MAX_JSON) -> bytes:
        return pad_message(self.raw, length)


def count_types(messages: Iterable[AuditMessage], table: TypeTable) -> list[int]:
    counts = [0] * len(table)
    for m in messages:
        counts[table.index(m.type_string)] += 1
    return counts


def check_known(messages: Sequence[AuditMessage], table: TypeTable) -> None:
    for m in messages:
        table.index(m.type_string)
