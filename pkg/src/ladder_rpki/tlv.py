"""Canonical length-prefixed TLV encoding.

Every field is ``tag (1 byte) || length (4 bytes, big-endian) || value``.
Records list their fields in a fixed order, so identical logical content
always serializes to identical bytes.
"""

from __future__ import annotations

import struct
from typing import Iterable, Iterator

HEADER = struct.Struct(">BI")
HEADER_SIZE = HEADER.size


class DecodeError(ValueError):
    pass


def encode(fields: Iterable[tuple[int, bytes]]) -> bytes:
    out = bytearray()
    for tag, value in fields:
        out += HEADER.pack(tag, len(value))
        out += value
    return bytes(out)


def field(tag: int, value: bytes) -> bytes:
    return HEADER.pack(tag, len(value)) + value


def iter_fields(data: bytes) -> Iterator[tuple[int, bytes]]:
    view = memoryview(data)
    pos = 0
    end = len(data)
    while pos < end:
        if end - pos < HEADER_SIZE:
            raise DecodeError("truncated TLV header")
        tag, length = HEADER.unpack_from(view, pos)
        pos += HEADER_SIZE
        if end - pos < length:
            raise DecodeError(f"truncated TLV value for tag {tag:#x}")
        yield tag, bytes(view[pos : pos + length])
        pos += length


def decode(data: bytes, expected: Iterable[int]) -> list[bytes]:
    """Decode a record whose tags must appear exactly in ``expected`` order."""
    expected = list(expected)
    values = []
    for (tag, value), want in zip(_strict(data, len(expected)), expected):
        if tag != want:
            raise DecodeError(f"expected tag {want:#x}, found {tag:#x}")
        values.append(value)
    return values


def _strict(data: bytes, count: int) -> list[tuple[int, bytes]]:
    items = list(iter_fields(data))
    if len(items) != count:
        raise DecodeError(f"expected {count} fields, found {len(items)}")
    return items


def u64(value: int) -> bytes:
    return value.to_bytes(8, "big")


def read_u64(value: bytes) -> int:
    if len(value) != 8:
        raise DecodeError("u64 field must be 8 bytes")
    return int.from_bytes(value, "big")


def text(value: str) -> bytes:
    return value.encode("utf-8")


def read_text(value: bytes) -> str:
    try:
        return value.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DecodeError("invalid UTF-8") from exc
