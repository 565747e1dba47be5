"""Canonical length-prefixed byte encoding.

Every structure that is hashed or signed goes through these helpers so the
byte form is stable: big-endian integers, 4-byte length prefixes.
"""

from __future__ import annotations

import struct
from typing import Iterable

_LEN = struct.Struct(">I")


def u8(n: int) -> bytes:
    return struct.pack(">B", n)


def u32(n: int) -> bytes:
    return struct.pack(">I", n)


def u64(n: int) -> bytes:
    return struct.pack(">Q", n)


def pack_fields(fields: Iterable[bytes]) -> bytes:
    out = bytearray()
    for f in fields:
        out += _LEN.pack(len(f))
        out += f
    return bytes(out)


def unpack_fields(data: bytes, count: int | None = None) -> list[bytes]:
    """Inverse of :func:`pack_fields`; raises ValueError on truncation."""
    fields = []
    pos = 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise ValueError("truncated length prefix")
        (n,) = _LEN.unpack_from(data, pos)
        pos += 4
        if pos + n > len(data):
            raise ValueError("truncated field")
        fields.append(bytes(data[pos : pos + n]))
        pos += n
    if count is not None and len(fields) != count:
        raise ValueError(f"expected {count} fields, got {len(fields)}")
    return fields


def pack_strings(items: Iterable[str]) -> bytes:
    return pack_fields(s.encode("utf-8") for s in items)


def unpack_strings(data: bytes, count: int | None = None) -> list[str]:
    return [f.decode("utf-8") for f in unpack_fields(data, count)]
