"""Byte packing and per-message digests."""

from __future__ import annotations

from .errors import WrongLength
from .messages import MAX_JSON, AuditMessage
from .poseidon import FIELD_MODULUS, PARAMS_ID, poseidon

LIMB_BYTES = 31

__all__ = [
    "FIELD_MODULUS",
    "PARAMS_ID",
    "LIMB_BYTES",
    "limb_spans",
    "pack_bytes",
    "unpack_limbs",
    "message_digest",
    "poseidon",
]


def limb_spans(length: int = MAX_JSON) -> list[tuple[int, int]]:
    """Byte ranges of each limb: ``[(0, 31), (31, 62), (62, 64)]`` for 64 bytes."""
    return [(s, min(s + LIMB_BYTES, length)) for s in range(0, length, LIMB_BYTES)]


def pack_bytes(padded: bytes, length: int = MAX_JSON) -> list[int]:
    if len(padded) != length:
        raise WrongLength(f"expected {length} bytes, got {len(padded)}")
    return [int.from_bytes(padded[a:b], "big") for a, b in limb_spans(length)]


def unpack_limbs(limbs: list[int], length: int = MAX_JSON) -> bytes:
    return b"".join(v.to_bytes(b - a, "big") for v, (a, b) in zip(limbs, limb_spans(length)))


def message_digest(msg: AuditMessage, length: int = MAX_JSON) -> int:
    return poseidon([*pack_bytes(msg.padded(length), length), msg.total_len])
