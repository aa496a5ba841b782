"""Client side of the protocol: builds invocations and verifies replies."""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field, replace
from typing import NamedTuple

from .crypto import DIGEST_SIZE, H0, KEY_SIZE, Envelope, auth_decrypt, auth_encrypt
from .errors import (
    ClientHalted,
    EchoMismatch,
    MalformedMessage,
    NoPending,
    PendingOperation,
    ProtocolViolation,
)
from .messages import InvokeMessage, OperationRequest, ReplyMessage


class Stability(enum.Enum):
    STABLE = "stable-among-majority"
    NOT_YET = "not-yet"


class Response(NamedTuple):
    result: bytes
    t: int
    q: int


@dataclass
class ClientState:
    client_id: int
    k_C: bytes = field(repr=False)
    t_c: int = 0
    t_s: int = 0
    h_c: bytes = H0
    pending: OperationRequest | None = None

    def to_bytes(self) -> bytes:
        out = struct.pack(">IQQ", self.client_id, self.t_c, self.t_s) + self.h_c + self.k_C
        if self.pending is None:
            return out + b"\x00"
        return out + b"\x01" + self.pending.to_bytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> ClientState:
        head = struct.calcsize(">IQQ")
        fixed = head + DIGEST_SIZE + KEY_SIZE + 1
        if len(data) < fixed:
            raise MalformedMessage("client snapshot too short")
        client_id, t_c, t_s = struct.unpack_from(">IQQ", data, 0)
        h_c = data[head:head + DIGEST_SIZE]
        k_C = data[head + DIGEST_SIZE:head + DIGEST_SIZE + KEY_SIZE]
        flag = data[fixed - 1]
        if flag == 0 and len(data) == fixed:
            pending = None
        elif flag == 1:
            pending = OperationRequest.from_bytes(data[fixed:])
        else:
            raise MalformedMessage("bad client snapshot")
        return cls(client_id, k_C, t_c, t_s, h_c, pending)


class LcmClient:
    """One sequential client.

    ``verify=False`` skips the echo assertion. It exists only so tests can
    build traces a correct client would never produce.
    """

    def __init__(self, client_id: int, k_C: bytes, *, verify: bool = True):
        self.state = ClientState(client_id, bytes(k_C))
        self.verify = verify
        self.halted: ProtocolViolation | None = None

    @classmethod
    def restore(cls, snapshot: bytes, *, verify: bool = True) -> LcmClient:
        state = ClientState.from_bytes(snapshot)
        client = cls(state.client_id, state.k_C, verify=verify)
        client.state = state
        return client

    def snapshot(self) -> bytes:
        return self.state.to_bytes()

    @property
    def client_id(self) -> int:
        return self.state.client_id

    def _check_live(self):
        if self.halted is not None:
            raise ClientHalted(f"client {self.client_id} halted: {self.halted!r}")

    def _seal(self, request: OperationRequest) -> Envelope:
        st = self.state
        msg = InvokeMessage(st.t_c, st.h_c, request, st.client_id)
        return auth_encrypt(msg.to_bytes(), st.k_C)

    def invoke(self, op: OperationRequest | bytes) -> Envelope:
        self._check_live()
        if self.state.pending is not None:
            raise PendingOperation("previous operation has not completed")
        if not isinstance(op, OperationRequest):
            op = OperationRequest(bytes(op))
        self.state.pending = op
        return self._seal(op)

    def invoke_dummy(self) -> Envelope:
        return self.invoke(OperationRequest(b"", is_dummy=True))

    def retry(self) -> Envelope:
        """Re-send the outstanding invocation, flagged as a retry."""
        self._check_live()
        if self.state.pending is None:
            raise NoPending("nothing to retry")
        return self._seal(replace(self.state.pending, is_retry=True))

    def handle_reply(self, envelope: Envelope) -> Response:
        self._check_live()
        st = self.state
        try:
            reply = ReplyMessage.from_bytes(auth_decrypt(envelope, st.k_C))
            if st.pending is None:
                raise EchoMismatch("reply without an outstanding invocation")
            if self.verify and reply.h_c_echo != st.h_c:
                raise EchoMismatch(f"client {st.client_id}: echoed chain value differs")
        except ProtocolViolation as exc:
            self.halted = exc
            raise
        st.t_c, st.t_s, st.h_c = reply.t, reply.q, reply.h
        st.pending = None
        return Response(reply.result, reply.t, reply.q)

    def stability_of(self, t_op: int) -> Stability:
        return Stability.STABLE if t_op <= self.state.t_s else Stability.NOT_YET

    def rekey(self, k_C: bytes) -> None:
        self.state.k_C = bytes(k_C)
