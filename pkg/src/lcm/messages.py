"""Plaintext message and state formats with canonical byte encodings.

All integers are big-endian. Variable-length fields carry a u32 length
prefix. Every value has exactly one encoding and ``from_bytes`` rejects
anything else (trailing bytes, unknown flags, unsorted maps).

=====================  =====================================================
InvokeMessage          0x01 | t_c u64 | h_c[32] | client u32 | request
OperationRequest       flags u8 (bit0 dummy, bit1 retry) | len u32 | op
ReplyMessage           0x02 | t u64 | h[32] | q u64 | h_c_echo[32] | len u32 | r
AdminCommand           0x03 | action u8 | client u32 | has_key u8 | [key[16]]
VEntry                 t_ack u64 | t_last u64 | h_last[32] | len u32 | result
ContextStateSnapshot   0x10 | len u32 | s | head_t u64 | head_h[32] | count u32
                       | (client u32 | VEntry)* | k_C[16]
SealedBlobPair         len u32 | blob_key | len u32 | blob_state
=====================  =====================================================
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .crypto import DIGEST_SIZE, KEY_SIZE, Envelope
from .errors import MalformedMessage

INVOKE_TAG = 0x01
REPLY_TAG = 0x02
ADMIN_TAG = 0x03
SNAPSHOT_TAG = 0x10

FLAG_DUMMY = 0x01
FLAG_RETRY = 0x02

U32_MAX = 2**32 - 1
U64_MAX = 2**64 - 1


class _Reader:
    def __init__(self, data: bytes):
        self.data = bytes(data)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise MalformedMessage("truncated buffer")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def blob(self) -> bytes:
        return self.take(self.u32())

    def expect_tag(self, tag: int) -> None:
        got = self.u8()
        if got != tag:
            raise MalformedMessage(f"expected type tag {tag:#04x}, got {got:#04x}")

    def finish(self) -> None:
        if self.pos != len(self.data):
            raise MalformedMessage(f"{len(self.data) - self.pos} trailing bytes")


def _blob(b: bytes) -> bytes:
    if len(b) > U32_MAX:
        raise ValueError("field too long")
    return struct.pack(">I", len(b)) + b


def _check_digest(d: bytes, name: str) -> None:
    if len(d) != DIGEST_SIZE:
        raise ValueError(f"{name} must be {DIGEST_SIZE} bytes")


@dataclass(frozen=True)
class OperationRequest:
    op_bytes: bytes
    is_dummy: bool = False
    is_retry: bool = False

    def __post_init__(self):
        if not self.op_bytes and not self.is_dummy:
            raise ValueError("empty operation must be a dummy")

    def to_bytes(self) -> bytes:
        flags = (FLAG_DUMMY if self.is_dummy else 0) | (FLAG_RETRY if self.is_retry else 0)
        return bytes([flags]) + _blob(self.op_bytes)

    @classmethod
    def _read(cls, r: _Reader) -> OperationRequest:
        flags = r.u8()
        if flags & ~(FLAG_DUMMY | FLAG_RETRY):
            raise MalformedMessage(f"unknown request flags {flags:#04x}")
        op = r.blob()
        dummy = bool(flags & FLAG_DUMMY)
        if not op and not dummy:
            raise MalformedMessage("empty non-dummy operation")
        return cls(op, dummy, bool(flags & FLAG_RETRY))

    @classmethod
    def from_bytes(cls, data: bytes) -> OperationRequest:
        r = _Reader(data)
        req = cls._read(r)
        r.finish()
        return req


@dataclass(frozen=True)
class InvokeMessage:
    t_c: int
    h_c: bytes
    request: OperationRequest
    client_id: int

    def __post_init__(self):
        _check_digest(self.h_c, "h_c")
        if not 0 <= self.t_c <= U64_MAX:
            raise ValueError("t_c out of range")
        if not 1 <= self.client_id <= U32_MAX:
            raise ValueError("client_id out of range")

    def to_bytes(self) -> bytes:
        return (
            struct.pack(">BQ", INVOKE_TAG, self.t_c)
            + self.h_c
            + struct.pack(">I", self.client_id)
            + self.request.to_bytes()
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> InvokeMessage:
        r = _Reader(data)
        r.expect_tag(INVOKE_TAG)
        t_c = r.u64()
        h_c = r.take(DIGEST_SIZE)
        client_id = r.u32()
        if client_id == 0:
            raise MalformedMessage("client id 0")
        request = OperationRequest._read(r)
        r.finish()
        return cls(t_c, h_c, request, client_id)


@dataclass(frozen=True)
class ReplyMessage:
    t: int
    h: bytes
    result: bytes
    q: int
    h_c_echo: bytes

    def __post_init__(self):
        _check_digest(self.h, "h")
        _check_digest(self.h_c_echo, "h_c_echo")
        if not 0 <= self.q <= self.t <= U64_MAX:
            raise ValueError("need 0 <= q <= t")

    def to_bytes(self) -> bytes:
        return (
            struct.pack(">BQ", REPLY_TAG, self.t)
            + self.h
            + struct.pack(">Q", self.q)
            + self.h_c_echo
            + _blob(self.result)
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> ReplyMessage:
        r = _Reader(data)
        r.expect_tag(REPLY_TAG)
        t = r.u64()
        h = r.take(DIGEST_SIZE)
        q = r.u64()
        echo = r.take(DIGEST_SIZE)
        result = r.blob()
        r.finish()
        if q > t:
            raise MalformedMessage("stable number exceeds sequence number")
        return cls(t, h, result, q, echo)


ADD_CLIENT = 1
REMOVE_CLIENT = 2


@dataclass(frozen=True)
class AdminCommand:
    action: int
    client_id: int
    new_key: bytes | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.action not in (ADD_CLIENT, REMOVE_CLIENT):
            raise ValueError(f"unknown admin action {self.action}")
        if self.new_key is not None and len(self.new_key) != KEY_SIZE:
            raise ValueError("new_key must be 16 bytes")

    def to_bytes(self) -> bytes:
        out = struct.pack(">BBIB", ADMIN_TAG, self.action, self.client_id,
                          self.new_key is not None)
        return out + (self.new_key or b"")

    @classmethod
    def from_bytes(cls, data: bytes) -> AdminCommand:
        r = _Reader(data)
        r.expect_tag(ADMIN_TAG)
        action = r.u8()
        client_id = r.u32()
        has_key = r.u8()
        if action not in (ADD_CLIENT, REMOVE_CLIENT) or has_key > 1:
            raise MalformedMessage("bad admin command")
        key = r.take(KEY_SIZE) if has_key else None
        r.finish()
        return cls(action, client_id, key)


@dataclass(frozen=True)
class VEntry:
    """What the context remembers about one client."""

    t_ack: int = 0
    t_last: int = 0
    h_last: bytes = bytes(DIGEST_SIZE)
    last_result: bytes = b""

    def __post_init__(self):
        _check_digest(self.h_last, "h_last")
        if not 0 <= self.t_ack <= self.t_last:
            raise ValueError("need 0 <= t_ack <= t_last")

    def to_bytes(self) -> bytes:
        return struct.pack(">QQ", self.t_ack, self.t_last) + self.h_last + _blob(self.last_result)

    @classmethod
    def _read(cls, r: _Reader) -> VEntry:
        t_ack, t_last = r.u64(), r.u64()
        h_last = r.take(DIGEST_SIZE)
        result = r.blob()
        if t_ack > t_last:
            raise MalformedMessage("t_ack exceeds t_last")
        return cls(t_ack, t_last, h_last, result)

    @classmethod
    def from_bytes(cls, data: bytes) -> VEntry:
        r = _Reader(data)
        entry = cls._read(r)
        r.finish()
        return entry


@dataclass(frozen=True)
class ContextStateSnapshot:
    """Everything the context needs to resume in a later epoch.

    ``head_t``/``head_h`` duplicate the newest ``V`` entry. They are kept
    separately because removing a client may delete that entry.
    """

    s: bytes
    V: dict[int, VEntry]
    k_C: bytes = field(repr=False)
    head_t: int = 0
    head_h: bytes = bytes(DIGEST_SIZE)

    def to_bytes(self) -> bytes:
        parts = [
            struct.pack(">B", SNAPSHOT_TAG),
            _blob(self.s),
            struct.pack(">Q", self.head_t),
            self.head_h,
            struct.pack(">I", len(self.V)),
        ]
        for cid in sorted(self.V):
            parts.append(struct.pack(">I", cid))
            parts.append(self.V[cid].to_bytes())
        parts.append(self.k_C)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> ContextStateSnapshot:
        r = _Reader(data)
        r.expect_tag(SNAPSHOT_TAG)
        s = r.blob()
        head_t = r.u64()
        head_h = r.take(DIGEST_SIZE)
        count = r.u32()
        V = {}
        prev = 0
        for _ in range(count):
            cid = r.u32()
            if cid <= prev:
                raise MalformedMessage("V entries not strictly sorted")
            V[cid] = VEntry._read(r)
            prev = cid
        k_C = r.take(KEY_SIZE)
        r.finish()
        return cls(s, V, k_C, head_t, head_h)


@dataclass(frozen=True)
class SealedBlobPair:
    blob_key: Envelope
    blob_state: Envelope

    def to_bytes(self) -> bytes:
        return _blob(self.blob_key.to_bytes()) + _blob(self.blob_state.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> SealedBlobPair:
        r = _Reader(data)
        key = Envelope.from_bytes(r.blob())
        state = Envelope.from_bytes(r.blob())
        r.finish()
        return cls(key, state)

    def __len__(self) -> int:
        return len(self.to_bytes())
