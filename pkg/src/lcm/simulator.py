"""Discrete-event simulation of clients, an untrusted host, and context instances.

Time is an integer count of simulated milliseconds. A correct host forwards
messages FIFO with fixed latency, stores every blob before forwarding the
replies it covers (in ``sync`` store mode), and restarts a crashed context
from the most recent blob. The adversary script bends each of those rules.
"""
from __future__ import annotations

import heapq
import random
import secrets
import time as _time
from dataclasses import dataclass, field
from typing import Callable

from . import adversary as adv
from . import trace as tr
from .client import LcmClient
from .context import TrustedContext
from .crypto import Envelope, PlatformIdentity
from .errors import ContextHalted, ProtocolViolation
from .kvs import CountingStore
from .storage import StableStore
from .trace import Trace
from .workload import WorkloadSpec

STORE_MODES = ("sync", "async")


@dataclass
class SimConfig:
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    seed: int = 0
    batch_size: int = 1
    store_mode: str = "sync"
    retry_timeout: int = 100
    max_retries: int = 10
    latency: int = 1
    think_time: int = 5
    dummy_every: int | None = None
    record_timing: bool = False
    # Test hook: turn off the client echo check and the context view check.
    verify: bool = True

    def __post_init__(self):
        if self.store_mode not in STORE_MODES:
            raise ValueError(f"store_mode must be one of {STORE_MODES}")
        if not 1 <= self.batch_size <= 16:
            raise ValueError("batch_size must be in 1..16")
        if self.retry_timeout < 1 or self.latency < 1:
            raise ValueError("retry_timeout and latency must be positive")

    @property
    def clients(self) -> int:
        return self.workload.clients


@dataclass
class Packet:
    kind: str  # "invoke" or "reply"
    client: int
    op_id: int
    envelope: Envelope
    retry: bool = False
    instance: int | None = None  # which instance produced a reply
    cached: bool = False


@dataclass
class Lineage:
    id: int
    store: StableStore
    platform: PlatformIdentity
    epochs: int = 0
    unflushed: list = field(default_factory=list)


@dataclass
class Instance:
    id: int
    ctx: TrustedContext
    lineage: Lineage
    alive: bool = True
    queue: list[Packet] = field(default_factory=list)
    scheduled: bool = False


@dataclass
class SimClient:
    client: LcmClient
    plan: list[bytes]
    next_index: int = 0
    op_id: int = 0
    real_done: int = 0
    dummy_due: bool = False
    stalled: bool = False
    snapshot: bytes = b""

    @property
    def done(self) -> bool:
        return self.next_index >= len(self.plan) and self.client.state.pending is None


@dataclass
class SimResult:
    trace: Trace
    clients: dict[int, SimClient]
    instances: dict[int, Instance]
    lineages: dict[int, Lineage]
    route: dict[int, int]
    app: CountingStore
    timings: list[float] = field(default_factory=list)

    @property
    def violations(self) -> list[tr.TraceEvent]:
        return self.trace.of_kind(tr.VIOLATION)

    def serving_instance(self, client: int = 1) -> Instance:
        return self.instances[self.route[client]]

    def completed(self, client: int | None = None) -> list[tr.TraceEvent]:
        return [e for e in self.trace.of_kind(tr.RESPONSE) if client is None or e.client == client]


class Simulation:
    def __init__(self, config: SimConfig, script: adv.AdversaryScript | None = None):
        self.config = config
        self.script = script or adv.AdversaryScript()
        self.rng = random.Random(config.seed)
        self.trace = Trace()
        self.now = 0
        self._queue: list = []
        self._counter = 0
        self.steps = 0
        self._pending_actions = list(self.script.actions)

        self.app = CountingStore()
        self.lineages: dict[int, Lineage] = {}
        self.instances: dict[int, Instance] = {}
        self.route: dict[int, int] = {}
        self.timings: list[float] = []

        # adversary state
        self._drops: list[list] = []  # [kind, client, remaining]
        self._reorder_window = 0
        self._reorder_buffer: list[Packet] = []
        self._reorder_gen = 0
        self._crash: str | None = None
        self._sent_invokes: dict[int, list[Packet]] = {}
        self._sent_replies: dict[int, list[Packet]] = {}
        self._platforms = 0

        self._bootstrap()

    # -- setup ---------------------------------------------------------

    def _new_platform(self) -> PlatformIdentity:
        platform = PlatformIdentity.create(f"platform-{self._platforms}")
        self._platforms += 1
        return platform

    def _bootstrap(self) -> None:
        cfg = self.config
        ids = list(range(1, cfg.clients + 1))
        k_P, k_C = secrets.token_bytes(16), secrets.token_bytes(16)
        lineage = Lineage(0, StableStore(0), self._new_platform())
        self.lineages[0] = lineage
        inst = self._spawn(lineage)
        inst.ctx.init(lineage.store.load())
        self.trace.add(tr.LOAD, self.now, instance=inst.id, lineage=0)
        self._store(inst, inst.ctx.bootstrap(k_P, k_C, ids), force_sync=True)
        plan = cfg.workload.generate(random.Random(self.rng.random()))
        self.clients = {
            cid: SimClient(LcmClient(cid, k_C, verify=cfg.verify), plan[cid]) for cid in ids
        }
        for cid in ids:
            self.route[cid] = inst.id
            self._sent_invokes[cid] = []
            self._sent_replies[cid] = []
            self._at(self.rng.randint(0, cfg.think_time), self._client_issue, cid)

    def _spawn(self, lineage: Lineage, platform: PlatformIdentity | None = None) -> Instance:
        ctx = TrustedContext(
            platform or lineage.platform,
            self.app,
            epoch=lineage.epochs,
            max_batch=16,
            verify=self.config.verify,
        )
        lineage.epochs += 1
        inst = Instance(len(self.instances), ctx, lineage)
        self.instances[inst.id] = inst
        return inst

    # -- event loop ----------------------------------------------------

    def _at(self, when: int, fn: Callable, *args) -> None:
        heapq.heappush(self._queue, (when, self._counter, fn, args))
        self._counter += 1

    def run(self) -> SimResult:
        while self._queue:
            when, _, fn, args = heapq.heappop(self._queue)
            self.now = when
            fn(*args)
        for lineage in self.lineages.values():
            self._flush(lineage)
        return SimResult(self.trace, self.clients, self.instances, self.lineages,
                         self.route, self.app, self.timings)

    # -- clients -------------------------------------------------------

    def _client_issue(self, cid: int) -> None:
        sc = self.clients[cid]
        client = sc.client
        if client.halted is not None or sc.stalled or client.state.pending is not None:
            return
        every = self.config.dummy_every
        if sc.dummy_due:
            env = client.invoke_dummy()
            op, dummy = b"", True
            sc.dummy_due = False
        elif sc.next_index < len(sc.plan):
            op, dummy = sc.plan[sc.next_index], False
            env = client.invoke(op)
            sc.next_index += 1
            sc.real_done += 1
            if every and sc.real_done % every == 0:
                sc.dummy_due = True
        else:
            return
        sc.op_id += 1
        self.trace.add(tr.INVOKE, self.now, client=cid, op_id=sc.op_id, op=op,
                       retry=False, dummy=dummy)
        self._send_invoke(Packet("invoke", cid, sc.op_id, env))
        self._at(self.now + self.config.retry_timeout, self._retry_timer, cid, sc.op_id, 1)

    def _retry_timer(self, cid: int, op_id: int, attempt: int) -> None:
        sc = self.clients[cid]
        client = sc.client
        if client.halted is not None or client.state.pending is None or sc.op_id != op_id:
            return
        if attempt > self.config.max_retries:
            sc.stalled = True
            self.trace.add(tr.STALL, self.now, client=cid, op_id=op_id)
            return
        env = client.retry()
        pending = client.state.pending
        self.trace.add(tr.INVOKE, self.now, client=cid, op_id=op_id, op=pending.op_bytes,
                       retry=True, dummy=pending.is_dummy)
        self._send_invoke(Packet("invoke", cid, op_id, env, retry=True))
        self._at(self.now + self.config.retry_timeout, self._retry_timer, cid, op_id, attempt + 1)

    def _client_receive(self, packet: Packet) -> None:
        sc = self.clients[packet.client]
        client = sc.client
        if client.halted is not None:
            return
        op_id = sc.op_id
        try:
            resp = client.handle_reply(packet.envelope)
        except ProtocolViolation as exc:
            self.trace.add(tr.VIOLATION, self.now, client=packet.client, op_id=op_id,
                           reason=type(exc).__name__, detail=str(exc))
            return
        self.trace.add(tr.RESPONSE, self.now, client=packet.client, op_id=op_id,
                       t=resp.t, q=resp.q, h=client.state.h_c, result=resp.result,
                       instance=packet.instance, detail="cached" if packet.cached else None)
        sc.snapshot = client.snapshot()
        sc.stalled = False
        self._at(self.now + self.rng.randint(0, self.config.think_time), self._client_issue,
                 packet.client)

    # -- host: network -------------------------------------------------

    def _send_invoke(self, packet: Packet) -> None:
        self._at(self.now + self.config.latency, self._host_receive, packet)

    def _send_reply(self, packet: Packet) -> None:
        if self._should_drop("reply", packet.client):
            return
        self._sent_replies[packet.client].append(packet)
        self._at(self.now + self.config.latency, self._client_receive, packet)

    def _should_drop(self, kind: str, client: int) -> bool:
        for rule in self._drops:
            if rule[0] == kind and rule[1] in (None, client) and rule[2] > 0:
                rule[2] -= 1
                self.trace.add(tr.ADVERSARY, self.now, client=client, reason="drop",
                               detail=f"dropped {kind}")
                return True
        return False

    def _host_receive(self, packet: Packet) -> None:
        self.steps += 1
        while self._pending_actions and self._pending_actions[0].at <= self.steps:
            self._apply(self._pending_actions.pop(0))
        self._sent_invokes[packet.client].append(packet)
        if self._should_drop("invoke", packet.client):
            return
        if self._reorder_window > 1:
            if not self._reorder_buffer:
                self._at(self.now + 5, self._release_reorder, self._reorder_gen)
            self._reorder_buffer.append(packet)
            if len(self._reorder_buffer) >= self._reorder_window:
                self._release_reorder(self._reorder_gen)
            return
        self._deliver(self.route[packet.client], packet)

    def _release_reorder(self, gen: int) -> None:
        if gen != self._reorder_gen:
            return
        self._reorder_gen += 1
        buffered, self._reorder_buffer = self._reorder_buffer, []
        self.rng.shuffle(buffered)
        for packet in buffered:
            self._deliver(self.route[packet.client], packet)

    def _deliver(self, iid: int, packet: Packet) -> None:
        inst = self.instances[iid]
        if not inst.alive:
            return
        inst.queue.append(packet)
        if not inst.scheduled:
            inst.scheduled = True
            self._at(self.now, self._process, iid)

    # -- host: context and storage --------------------------------------

    def _store(self, inst: Instance, blobs, force_sync: bool = False) -> None:
        lineage = inst.lineage
        if self.config.store_mode == "sync" or force_sync:
            version = lineage.store.store(blobs, inst.ctx.t)
            self.trace.add(tr.STORE, self.now, instance=inst.id, lineage=lineage.id,
                           version=version, t=inst.ctx.t)
        else:
            if not lineage.unflushed:
                self._at(self.now + 1, self._flush, lineage)
            lineage.unflushed.append((inst.id, blobs, inst.ctx.t))

    def _flush(self, lineage: Lineage) -> None:
        for iid, blobs, t in lineage.unflushed:
            version = lineage.store.store(blobs, t)
            self.trace.add(tr.STORE, self.now, instance=iid, lineage=lineage.id,
                           version=version, t=t)
        lineage.unflushed = []

    def _process(self, iid: int) -> None:
        inst = self.instances[iid]
        inst.scheduled = False
        if not inst.alive or not inst.queue:
            return
        batch = inst.queue[: self.config.batch_size]
        del inst.queue[: len(batch)]
        ctx = inst.ctx
        started = _time.perf_counter() if self.config.record_timing else 0.0
        try:
            result = ctx.handle_batch([p.envelope for p in batch])
        except ContextHalted:
            inst.queue.clear()
            return
        if self.config.record_timing:
            self.timings.append(_time.perf_counter() - started)
        ctx.drain_executions()

        crash, self._crash = self._crash, None
        durable = crash != "before"
        for packet, outcome in zip(batch, result.outcomes):
            ex = outcome.execution
            if ex is not None:
                self.trace.add(tr.EXECUTE, self.now, instance=iid, lineage=inst.lineage.id,
                               client=packet.client, op_id=packet.op_id, t=ex.t, h=ex.h,
                               prev_h=ex.prev_h, op=ex.op_bytes, result=ex.result,
                               dummy=ex.dummy, durable=durable)
        if result.violation is not None:
            bad = batch[len(result.outcomes)]
            self.trace.add(tr.VIOLATION, self.now, instance=iid, client=bad.client,
                           op_id=bad.op_id, reason=type(result.violation).__name__,
                           detail=str(result.violation))

        if crash == "before":
            self._crash_restart(inst, "crash-before-store")
            return
        if result.blob is not None:
            self._store(inst, result.blob)
        if crash == "after":
            self._crash_restart(inst, "crash-after-store")
            return
        for packet, outcome in zip(batch, result.outcomes):
            self._send_reply(Packet("reply", packet.client, packet.op_id, outcome.reply,
                                    instance=iid, cached=outcome.cached))
        if result.violation is not None:
            inst.queue.clear()
        elif inst.queue and not inst.scheduled:
            inst.scheduled = True
            self._at(self.now, self._process, iid)

    def _kill(self, inst: Instance) -> None:
        inst.alive = False
        inst.queue.clear()
        inst.lineage.unflushed = []

    def _start(self, lineage: Lineage, version: int | None, reason: str,
               replaces: Instance | None = None) -> Instance:
        new = self._spawn(lineage)
        if version is None:
            version = lineage.store.next_load()
        self.trace.add(tr.CONTEXT_RESTART, self.now, instance=new.id, lineage=lineage.id,
                       version=version, reason=reason,
                       detail=None if replaces is None else f"replaces {replaces.id}")
        self.trace.add(tr.LOAD, self.now, instance=new.id, lineage=lineage.id, version=version)
        try:
            new.ctx.init(lineage.store.load(version))
        except ProtocolViolation as exc:
            self.trace.add(tr.VIOLATION, self.now, instance=new.id,
                           reason=type(exc).__name__, detail=f"init: {exc}")
        if replaces is not None:
            for cid, iid in self.route.items():
                if iid == replaces.id:
                    self.route[cid] = new.id
        return new

    def _crash_restart(self, inst: Instance, reason: str) -> None:
        self._kill(inst)
        self._start(inst.lineage, None, reason, replaces=inst)

    # -- adversary -----------------------------------------------------

    def _apply(self, action: adv.Action) -> None:
        self.trace.add(tr.ADVERSARY, self.now, reason=action.name, detail=action.describe())
        if isinstance(action, adv.DeliverFifo):
            self._drops.clear()
            self._reorder_window = 0
            if self._reorder_buffer:
                self._release_reorder(self._reorder_gen)
        elif isinstance(action, adv.Drop):
            self._drops.append([action.kind, action.client, action.count])
        elif isinstance(action, adv.Replay):
            self._replay(action)
        elif isinstance(action, adv.Reorder):
            self._reorder_window = action.window
        elif isinstance(action, adv.RestartContextFrom):
            inst = self.instances[self.route[action.client]]
            version = None
            if action.version is not None or action.back is not None:
                version = inst.lineage.store.resolve(action.version, action.back)
            self._kill(inst)
            self._start(inst.lineage, version, "adversary-restart", replaces=inst)
        elif isinstance(action, adv.ForkContexts):
            self._fork(action)
        elif isinstance(action, adv.Route):
            self.route[action.client] = self.route[action.to_client]
        elif isinstance(action, adv.CrashBeforeStore):
            self._crash = "before"
        elif isinstance(action, adv.CrashAfterStore):
            self._crash = "after"
        elif isinstance(action, adv.SubstituteBlob):
            store = self.instances[self.route[action.client]].lineage.store
            store.substitute(store.resolve(action.version, action.back))
        elif isinstance(action, adv.Migrate):
            self._migrate(action.client)
        else:
            raise TypeError(f"unknown action {action!r}")

    def _replay(self, action: adv.Replay) -> None:
        if action.kind == "invoke":
            history = self._sent_invokes.get(action.client, [])
            if len(history) <= action.back:
                return
            packet = history[-1 - action.back]
            target = action.to_client or action.client
            self._deliver(self.route[target], packet)
        else:
            history = self._sent_replies.get(action.client, [])
            if len(history) <= action.back:
                return
            packet = history[-1 - action.back]
            self._at(self.now + self.config.latency, self._client_receive, packet)

    def _fork(self, action: adv.ForkContexts) -> None:
        for group in action.groups[1:]:
            members = [c for c in group if c in self.route]
            if not members:
                continue
            source = self.instances[self.route[members[0]]]
            version = source.lineage.store.resolve(action.version, action.back)
            lineage = Lineage(len(self.lineages), source.lineage.store.branch(len(self.lineages), version),
                              source.lineage.platform)
            self.lineages[lineage.id] = lineage
            self.trace.add(tr.FORK, self.now, lineage=lineage.id, version=version,
                           detail=f"from lineage {source.lineage.id} for clients {members}")
            new = self._start(lineage, version, "fork")
            for cid in members:
                self.route[cid] = new.id

    def _migrate(self, client: int) -> None:
        source = self.instances[self.route[client]]
        if not source.alive or source.ctx.halted:
            return
        platform = self._new_platform()
        target = self._spawn(source.lineage, platform)
        blobs = source.ctx.migrate_out(target.ctx)
        source.alive = False
        source.lineage.platform = platform
        self.trace.add(tr.MIGRATE, self.now, instance=target.id, lineage=source.lineage.id,
                       detail=f"from instance {source.id} to {platform.platform_id}")
        self._store(target, blobs, force_sync=True)
        target.queue, source.queue = source.queue, []
        for cid, iid in self.route.items():
            if iid == source.id:
                self.route[cid] = target.id
        if target.queue:
            target.scheduled = True
            self._at(self.now, self._process, target.id)


def simulate(config: SimConfig, script: adv.AdversaryScript | None = None) -> SimResult:
    return Simulation(config, script).run()
