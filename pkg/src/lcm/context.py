"""The trusted execution context: verifies client views, executes
operations in one sequence, extends the hash chain, and seals its state."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .crypto import (
    H0,
    Envelope,
    PlatformIdentity,
    auth_decrypt,
    auth_encrypt,
    chain_hash,
    get_key,
)
from .errors import (
    AlreadyBootstrapped,
    ContextHalted,
    DuplicateClient,
    MalformedMessage,
    NotReady,
    ProtocolViolation,
    TargetNotFresh,
    UnknownClient,
    ViewMismatch,
)
from .kvs import KeyValueStore
from .messages import (
    ADD_CLIENT,
    REMOVE_CLIENT,
    AdminCommand,
    ContextStateSnapshot,
    InvokeMessage,
    ReplyMessage,
    SealedBlobPair,
    VEntry,
)

PROGRAM_ID = b"LCM/kvs/1"

NEW = "new"
AWAITING_BOOTSTRAP = "awaiting-bootstrap"
READY = "ready"
HALTED = "halted"


def majority_stable(V: Mapping[int, VEntry] | Iterable[int]) -> int:
    """Largest acknowledged sequence number covered by more than n/2 entries.

    Accepts either a ``V`` map or the bare list of acknowledged numbers.
    """
    if isinstance(V, Mapping):
        acks = [entry.t_ack for entry in V.values()]
    else:
        acks = list(V)
    n = len(acks)
    best = 0
    for s in set(acks):
        if s > best and sum(1 for a in acks if a >= s) * 2 > n:
            best = s
    return best


@dataclass(frozen=True)
class Execution:
    """Introspection record for one call into the application."""

    client_id: int
    t: int
    prev_h: bytes
    h: bytes
    op_bytes: bytes
    result: bytes
    dummy: bool


@dataclass
class Outcome:
    """What happened to one invocation inside a batch."""

    reply: Envelope
    client_id: int
    cached: bool
    execution: Execution | None = None


@dataclass
class BatchResult:
    outcomes: list[Outcome] = field(default_factory=list)
    blob: SealedBlobPair | None = None
    violation: ProtocolViolation | None = None

    @property
    def replies(self) -> list[Envelope]:
        return [o.reply for o in self.outcomes]


class TrustedContext:
    """One instance (one epoch) of the protocol inside a TEE.

    The host drives it: ``init`` with whatever storage returned, then
    ``handle_invoke``/``handle_batch``. Every method that changes state
    returns the sealed blob pair the host must store before forwarding
    replies. ``verify=False`` disables the view check for negative tests.
    """

    def __init__(
        self,
        platform: PlatformIdentity,
        app=None,
        program_id: bytes = PROGRAM_ID,
        *,
        epoch: int = 0,
        max_batch: int = 16,
        verify: bool = True,
    ):
        self.platform = platform
        self.app = app if app is not None else KeyValueStore()
        self.program_id = program_id
        self.epoch = epoch
        self.max_batch = max_batch
        self.verify = verify

        self.status = NEW
        self.halt_reason: Exception | str | None = None
        self.t = 0
        self.h = H0
        self.V: dict[int, VEntry] = {}
        self.s = self.app.initial_state()
        self._k_S: bytes | None = None
        self._k_P: bytes | None = None
        self._k_C: bytes | None = None
        self._blob_key: Envelope | None = None
        self.executions: list[Execution] = []

    # -- lifecycle -----------------------------------------------------

    def init(self, blobs: SealedBlobPair | None) -> None:
        """Start a new epoch from stored state, or wait for bootstrap if none."""
        if self.status != NEW:
            raise AlreadyBootstrapped("init called twice")
        self._k_S = get_key(self.platform, self.program_id)
        if blobs is None:
            self.status = AWAITING_BOOTSTRAP
            return
        try:
            k_P = auth_decrypt(blobs.blob_key, self._k_S)
            snapshot = ContextStateSnapshot.from_bytes(auth_decrypt(blobs.blob_state, k_P))
        except ProtocolViolation as exc:
            self._halt(exc)
            raise
        self._k_P = k_P
        self._blob_key = blobs.blob_key
        self._install(snapshot)

    def bootstrap(self, k_P: bytes, k_C: bytes, clients: Iterable[int]) -> SealedBlobPair:
        """Receive admin keys and the client group; returns the initial blob."""
        if self.status == NEW:
            self._k_S = get_key(self.platform, self.program_id)
        elif self.status != AWAITING_BOOTSTRAP:
            raise AlreadyBootstrapped(f"context is {self.status}")
        self._k_P, self._k_C = bytes(k_P), bytes(k_C)
        self.V = {cid: VEntry() for cid in sorted(set(clients))}
        if not self.V or min(self.V) < 1:
            raise ValueError("need at least one client id >= 1")
        self.s = self.app.initial_state()
        self.t, self.h = 0, H0
        self.status = READY
        return self.seal()

    def _install(self, snapshot: ContextStateSnapshot) -> None:
        self.s = self.app.deserialize(snapshot.s)
        self.V = dict(snapshot.V)
        self._k_C = snapshot.k_C
        self.t, self.h = snapshot.head_t, snapshot.head_h
        if self.V:
            newest = max(self.V.values(), key=lambda e: e.t_last)
            if newest.t_last > self.t:
                self.t, self.h = newest.t_last, newest.h_last
        self.status = READY

    def _halt(self, reason) -> None:
        self.status = HALTED
        self.halt_reason = reason

    @property
    def halted(self) -> bool:
        return self.status == HALTED

    @property
    def n(self) -> int:
        return len(self.V)

    def _require_ready(self) -> None:
        if self.status == HALTED:
            raise ContextHalted(f"context halted: {self.halt_reason!r}")
        if self.status != READY:
            raise NotReady(f"context is {self.status}")

    def snapshot(self) -> ContextStateSnapshot:
        return ContextStateSnapshot(
            self.app.serialize(self.s), dict(self.V), self._k_C, self.t, self.h
        )

    def seal(self) -> SealedBlobPair:
        if self._blob_key is None:
            self._blob_key = auth_encrypt(self._k_P, self._k_S)
        blob_state = auth_encrypt(self.snapshot().to_bytes(), self._k_P)
        return SealedBlobPair(self._blob_key, blob_state)

    # -- request processing ---------------------------------------------

    def handle_invoke(self, envelope: Envelope) -> tuple[Envelope, SealedBlobPair | None]:
        """Process one invocation.

        The blob is ``None`` when a retry was answered from the cache and
        nothing changed. Violations halt the context and propagate.
        """
        self._require_ready()
        try:
            outcome = self._process(envelope)
        except ProtocolViolation as exc:
            self._halt(exc)
            raise
        return outcome.reply, (None if outcome.cached else self.seal())

    def handle_batch(self, envelopes: Sequence[Envelope]) -> BatchResult:
        """Process invocations in order and seal once at the end."""
        self._require_ready()
        if len(envelopes) > self.max_batch:
            raise ValueError(f"batch of {len(envelopes)} exceeds {self.max_batch}")
        result = BatchResult()
        changed = False
        for env in envelopes:
            try:
                outcome = self._process(env)
            except ProtocolViolation as exc:
                self._halt(exc)
                result.violation = exc
                break
            result.outcomes.append(outcome)
            changed = changed or not outcome.cached
        if changed:
            # Sealed even after a mid-batch halt: earlier replies need it stored.
            result.blob = self.seal()
        return result

    def _process(self, envelope: Envelope) -> Outcome:
        msg = InvokeMessage.from_bytes(auth_decrypt(envelope, self._k_C))
        i = msg.client_id
        entry = self.V.get(i)
        if entry is None:
            raise ViewMismatch(f"client {i} is not in the group")
        req = msg.request

        if req.is_retry and entry.t_last > msg.t_c and entry.t_ack == msg.t_c:
            # Executed and stored before a crash; the reply was lost.
            q = min(majority_stable(self.V), entry.t_last)
            reply = ReplyMessage(entry.t_last, entry.h_last, entry.last_result, q, msg.h_c)
            return Outcome(auth_encrypt(reply.to_bytes(), self._k_C), i, cached=True)

        if self.verify and (entry.t_last, entry.h_last) != (msg.t_c, msg.h_c):
            raise ViewMismatch(
                f"client {i} claims t={msg.t_c}, context has t={entry.t_last}"
            )

        self.t += 1
        if req.is_dummy:
            r = b""
        else:
            r, self.s = self.app.execute(self.s, req.op_bytes)
        prev_h = self.h
        self.h = chain_hash(self.h, req.op_bytes, self.t, i)
        self.V[i] = VEntry(msg.t_c, self.t, self.h, r)
        q = majority_stable(self.V)
        execution = Execution(i, self.t, prev_h, self.h, req.op_bytes, r, req.is_dummy)
        self.executions.append(execution)
        reply = ReplyMessage(self.t, self.h, r, q, msg.h_c)
        return Outcome(auth_encrypt(reply.to_bytes(), self._k_C), i, False, execution)

    def drain_executions(self) -> list[Execution]:
        out, self.executions = self.executions, []
        return out

    # -- migration -----------------------------------------------------

    def migrate_out(self, target: TrustedContext) -> SealedBlobPair:
        """Hand state and k_P to a fresh context on another platform.

        Returns the blob pair sealed by the target. This context halts.
        """
        self._require_ready()
        if target.status not in (NEW, AWAITING_BOOTSTRAP):
            raise TargetNotFresh(f"target is {target.status}")
        state_blob = auth_encrypt(self.snapshot().to_bytes(), self._k_P)
        blobs = target._accept_migration(self._k_P, state_blob)
        self._halt("migrated")
        return blobs

    def _accept_migration(self, k_P: bytes, state_blob: Envelope) -> SealedBlobPair:
        self._k_S = get_key(self.platform, self.program_id)
        self._k_P = bytes(k_P)
        self._install(ContextStateSnapshot.from_bytes(auth_decrypt(state_blob, self._k_P)))
        return self.seal()

    # -- membership ----------------------------------------------------

    def _admin(self, envelope: Envelope) -> AdminCommand:
        self._require_ready()
        try:
            plaintext = auth_decrypt(envelope, self._k_C)
            return AdminCommand.from_bytes(plaintext)
        except ProtocolViolation as exc:
            self._halt(exc)
            raise

    def add_client(self, envelope: Envelope) -> SealedBlobPair:
        cmd = self._admin(envelope)
        if cmd.action != ADD_CLIENT:
            raise MalformedMessage("expected an add-client command")
        if cmd.client_id in self.V:
            raise DuplicateClient(f"client {cmd.client_id} already in group")
        if cmd.client_id < 1:
            raise ValueError("client ids start at 1")
        self.V[cmd.client_id] = VEntry()
        return self.seal()

    def remove_client(self, envelope: Envelope) -> SealedBlobPair:
        cmd = self._admin(envelope)
        if cmd.action != REMOVE_CLIENT or cmd.new_key is None:
            raise MalformedMessage("expected a remove-client command with a fresh key")
        if cmd.client_id not in self.V:
            raise UnknownClient(f"client {cmd.client_id} not in group")
        del self.V[cmd.client_id]
        self._k_C = cmd.new_key
        return self.seal()


def admin_command(action: int, client_id: int, k_C: bytes, new_key: bytes | None = None) -> Envelope:
    """Build an authenticated admin command under the current k_C."""
    return auth_encrypt(AdminCommand(action, client_id, new_key).to_bytes(), k_C)


def add_client_command(client_id: int, k_C: bytes) -> Envelope:
    return admin_command(ADD_CLIENT, client_id, k_C)


def remove_client_command(client_id: int, k_C: bytes, new_key: bytes) -> Envelope:
    return admin_command(REMOVE_CLIENT, client_id, k_C, new_key)
