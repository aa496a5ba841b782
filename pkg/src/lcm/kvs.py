"""Key-value store application executed inside the trusted context.

Operation bytes: kind u8 (1 get, 2 put, 3 del) | len u32 | key [| len u32 | value].
Result bytes:    status u8 (0 ok, 1 not-found, 2 error) [| len u32 | value].
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Mapping

GET, PUT, DEL = 1, 2, 3
KIND_NAMES = {GET: "get", PUT: "put", DEL: "del"}

OK, NOT_FOUND, ERROR = 0, 1, 2

MAX_KEY_SIZE = 1024


class MalformedOperation(ValueError):
    pass


@dataclass(frozen=True)
class KvsOperation:
    kind: int
    key: bytes
    value: bytes | None = None

    def __post_init__(self):
        if self.kind not in KIND_NAMES:
            raise MalformedOperation(f"unknown kind {self.kind}")
        if not self.key or len(self.key) > MAX_KEY_SIZE:
            raise MalformedOperation("key must be 1..1024 bytes")
        if (self.value is not None) != (self.kind == PUT):
            raise MalformedOperation("value is required for put and only for put")

    def to_bytes(self) -> bytes:
        out = struct.pack(">BI", self.kind, len(self.key)) + self.key
        if self.kind == PUT:
            out += struct.pack(">I", len(self.value)) + self.value
        return out

    @classmethod
    def from_bytes(cls, data: bytes) -> KvsOperation:
        try:
            kind, klen = struct.unpack_from(">BI", data, 0)
            pos = 5
            key = bytes(data[pos:pos + klen])
            if len(key) != klen:
                raise MalformedOperation("truncated key")
            pos += klen
            value = None
            if kind == PUT:
                (vlen,) = struct.unpack_from(">I", data, pos)
                pos += 4
                value = bytes(data[pos:pos + vlen])
                if len(value) != vlen:
                    raise MalformedOperation("truncated value")
                pos += vlen
        except struct.error:
            raise MalformedOperation("truncated operation") from None
        if pos != len(data):
            raise MalformedOperation("trailing bytes")
        return cls(kind, key, value)


def get(key: bytes) -> bytes:
    return KvsOperation(GET, key).to_bytes()


def put(key: bytes, value: bytes) -> bytes:
    return KvsOperation(PUT, key, value).to_bytes()


def delete(key: bytes) -> bytes:
    return KvsOperation(DEL, key).to_bytes()


def encode_result(status: int, value: bytes | None = None) -> bytes:
    if value is None:
        return bytes([status])
    return bytes([status]) + struct.pack(">I", len(value)) + value


def decode_result(data: bytes) -> tuple[int, bytes | None]:
    if not data:
        raise MalformedOperation("empty result")
    if len(data) == 1:
        return data[0], None
    (vlen,) = struct.unpack_from(">I", data, 1)
    if len(data) != 5 + vlen:
        raise MalformedOperation("bad result length")
    return data[0], bytes(data[5:])


def execute(state: Mapping[bytes, bytes], op_bytes: bytes) -> tuple[bytes, Mapping[bytes, bytes]]:
    """Apply one operation. Returns ``(result, new_state)``; never raises.

    The input mapping is not modified; writes return a fresh dict.
    """
    try:
        op = KvsOperation.from_bytes(op_bytes)
    except MalformedOperation:
        return encode_result(ERROR), state
    if op.kind == GET:
        if op.key in state:
            return encode_result(OK, state[op.key]), state
        return encode_result(NOT_FOUND), state
    if op.kind == PUT:
        new = dict(state)
        new[op.key] = op.value
        return encode_result(OK), new
    if op.key not in state:
        return encode_result(NOT_FOUND), state
    new = dict(state)
    del new[op.key]
    return encode_result(OK), new


def serialize(state: Mapping[bytes, bytes]) -> bytes:
    parts = [struct.pack(">I", len(state))]
    for key in sorted(state):
        value = state[key]
        parts.append(struct.pack(">I", len(key)) + key + struct.pack(">I", len(value)) + value)
    return b"".join(parts)


def deserialize(data: bytes) -> dict[bytes, bytes]:
    try:
        (count,) = struct.unpack_from(">I", data, 0)
        pos = 4
        state = {}
        prev = None
        for _ in range(count):
            (klen,) = struct.unpack_from(">I", data, pos)
            key = bytes(data[pos + 4:pos + 4 + klen])
            pos += 4 + klen
            (vlen,) = struct.unpack_from(">I", data, pos)
            value = bytes(data[pos + 4:pos + 4 + vlen])
            pos += 4 + vlen
            if len(key) != klen or len(value) != vlen:
                raise ValueError("truncated state")
            if prev is not None and key <= prev:
                raise ValueError("keys not strictly sorted")
            state[key] = value
            prev = key
    except struct.error:
        raise ValueError("truncated state") from None
    if pos != len(data):
        raise ValueError("trailing bytes in state")
    return state


class KeyValueStore:
    """The application hook the trusted context calls into."""

    name = "kvs"

    def initial_state(self) -> dict:
        return {}

    def execute(self, state, op_bytes):
        return execute(state, op_bytes)

    def serialize(self, state) -> bytes:
        return serialize(state)

    def deserialize(self, data: bytes):
        return deserialize(data)


class CountingStore(KeyValueStore):
    """KVS that counts how often each operation payload is executed."""

    def __init__(self):
        self.calls = 0

    def execute(self, state, op_bytes):
        self.calls += 1
        return execute(state, op_bytes)
