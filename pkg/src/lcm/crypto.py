"""AES-GCM envelopes, the operation hash chain, and emulated TEE keys."""
from __future__ import annotations

import hashlib
import os
import secrets
import struct
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import AuthenticationFailure, MalformedMessage

KEY_SIZE = 16
NONCE_SIZE = 12
TAG_SIZE = 16
DIGEST_SIZE = 32

# Chain head before any operation. Both clients and the context start here.
H0 = bytes(DIGEST_SIZE)

_GET_KEY_INFO = b"lcm/get-key/v1|"


def generate_key() -> bytes:
    return secrets.token_bytes(KEY_SIZE)


def _check_key(key: bytes) -> None:
    if not isinstance(key, (bytes, bytearray)) or len(key) != KEY_SIZE:
        raise ValueError(f"key must be {KEY_SIZE} bytes")


@dataclass(frozen=True)
class Envelope:
    nonce: bytes
    ciphertext: bytes
    tag: bytes

    def to_bytes(self) -> bytes:
        return self.nonce + self.ciphertext + self.tag

    @classmethod
    def from_bytes(cls, data: bytes) -> Envelope:
        if len(data) < NONCE_SIZE + TAG_SIZE:
            raise MalformedMessage(f"envelope too short ({len(data)} bytes)")
        return cls(
            bytes(data[:NONCE_SIZE]),
            bytes(data[NONCE_SIZE:-TAG_SIZE]),
            bytes(data[-TAG_SIZE:]),
        )

    def __len__(self) -> int:
        return len(self.nonce) + len(self.ciphertext) + len(self.tag)


def auth_encrypt(plaintext: bytes, key: bytes) -> Envelope:
    _check_key(key)
    nonce = os.urandom(NONCE_SIZE)
    sealed = AESGCM(bytes(key)).encrypt(nonce, bytes(plaintext), None)
    return Envelope(nonce, sealed[:-TAG_SIZE], sealed[-TAG_SIZE:])


def auth_decrypt(envelope: Envelope, key: bytes) -> bytes:
    """Return the plaintext or raise :class:`AuthenticationFailure`."""
    _check_key(key)
    if len(envelope.nonce) != NONCE_SIZE or len(envelope.tag) != TAG_SIZE:
        raise AuthenticationFailure("envelope has bad nonce or tag length")
    try:
        return AESGCM(bytes(key)).decrypt(
            envelope.nonce, envelope.ciphertext + envelope.tag, None
        )
    except InvalidTag:
        raise AuthenticationFailure("authentication tag mismatch") from None


def chain_hash(prev: bytes, op_bytes: bytes, t: int, client_id: int) -> bytes:
    """Extend the hash chain by one executed operation.

    Input layout: prev (32) | len(op) u32 | op | t u64 | client u32, big-endian.
    """
    if len(prev) != DIGEST_SIZE:
        raise ValueError("prev must be a 32-byte digest")
    if t < 1 or client_id < 1:
        raise ValueError("t and client_id start at 1")
    h = hashlib.sha256()
    h.update(prev)
    h.update(struct.pack(">I", len(op_bytes)))
    h.update(op_bytes)
    h.update(struct.pack(">QI", t, client_id))
    return h.digest()


@dataclass(frozen=True)
class PlatformIdentity:
    """Stand-in for the hardware root key of one TEE."""

    platform_id: str
    platform_secret: bytes = field(repr=False)

    @classmethod
    def create(cls, platform_id: str) -> PlatformIdentity:
        return cls(platform_id, secrets.token_bytes(32))


def get_key(platform: PlatformIdentity, program_id: bytes) -> bytes:
    """Deterministic per-(platform, program) key, like the TEE's sealing key."""
    return HKDF(
        algorithm=hashes.SHA256(),
        length=KEY_SIZE,
        salt=None,
        info=_GET_KEY_INFO + bytes(program_id),
    ).derive(platform.platform_secret)
