"""Canonical byte encoding shared by every signed or hashed structure.

All multi-field messages are serialized as length-prefixed big-endian field
concatenation in a fixed declared order, then hashed before signing.  A single
codec removes malleability: two structurally different values can never encode
to the same byte string.
"""

from __future__ import annotations

import struct

_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")


def enc_u32(value: int) -> bytes:
    if value < 0 or value > 0xFFFFFFFF:
        raise ValueError(f"u32 out of range: {value}")
    return _U32.pack(value)


def enc_u64(value: int) -> bytes:
    if value < 0 or value > 0xFFFFFFFFFFFFFFFF:
        raise ValueError(f"u64 out of range: {value}")
    return _U64.pack(value)


def enc_bytes(data: bytes) -> bytes:
    """Length-prefixed raw bytes."""
    return _U32.pack(len(data)) + data


def enc_str(text: str) -> bytes:
    return enc_bytes(text.encode("utf-8"))


def enc_balance_vector(balances: list[int]) -> bytes:
    """Canonical encoding of a balance vector: count, then each amount."""
    parts = [enc_u32(len(balances))]
    parts.extend(enc_u64(b) for b in balances)
    return b"".join(parts)
