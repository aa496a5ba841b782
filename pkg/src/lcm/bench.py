"""Relative-throughput benchmark.

Runs client and context in one tight loop, no simulated network, so the
numbers measure protocol overhead only. Modes:

``baseline-no-lcm``
    Authenticated channel and KVS execution; no chain, no V, no sealing.
``lcm``
    Full protocol, one invocation per context call, blob written per call.
``lcm-batch``
    Up to ``batch_size`` invocations from different clients per call.
``tmc-emulated``
    ``lcm`` plus a 60 ms sleep per operation standing in for a trusted
    monotonic counter increment.

``store_mode`` picks plain writes (``async``) or writes with fsync
(``sync``) for every blob.
"""
from __future__ import annotations

import csv
import random
import tempfile
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable

from . import kvs
from .client import LcmClient
from .context import TrustedContext
from .crypto import PlatformIdentity, auth_decrypt, auth_encrypt, generate_key
from .storage import FileStore
from .workload import WorkloadSpec

MODES = ("baseline-no-lcm", "lcm", "lcm-batch", "tmc-emulated")
TMC_DELAY = 0.060
TMC_MAX_OPS = 20


@dataclass
class BenchRow:
    mode: str
    store_mode: str
    clients: int
    batch_size: int
    ops: int
    value_size: int
    seconds: float
    ops_per_sec: float


def _plan(spec: WorkloadSpec) -> list[tuple[int, bytes]]:
    """Operations in issue order, round-robin over clients."""
    per_client = spec.generate(random.Random(spec.seed))
    order = []
    for i in range(max(map(len, per_client.values()), default=0)):
        for cid in sorted(per_client):
            if i < len(per_client[cid]):
                order.append((cid, per_client[cid][i]))
    return order


def _baseline(spec: WorkloadSpec) -> float:
    key = generate_key()
    state = kvs.KeyValueStore().initial_state()
    for op in spec.load_phase():
        _, state = kvs.execute(state, op)
    plan = _plan(spec)
    started = time.perf_counter()
    for _, op in plan:
        request = auth_encrypt(op, key)
        result, state = kvs.execute(state, auth_decrypt(request, key))
        auth_decrypt(auth_encrypt(result, key), key)
    return time.perf_counter() - started


def _lcm(spec: WorkloadSpec, store: FileStore, batch_size: int, delay: float = 0.0) -> float:
    ids = list(range(1, spec.clients + 1))
    k_P, k_C = generate_key(), generate_key()
    ctx = TrustedContext(PlatformIdentity.create("bench"), kvs.KeyValueStore())
    ctx.init(None)
    store.store(ctx.bootstrap(k_P, k_C, ids))
    clients = {cid: LcmClient(cid, k_C) for cid in ids}

    # Untimed load phase through the protocol, so the state is populated.
    for i, op in enumerate(spec.load_phase()):
        client = clients[ids[i % len(ids)]]
        reply, _ = ctx.handle_invoke(client.invoke(op))
        client.handle_reply(reply)

    plan = _plan(spec)
    started = time.perf_counter()
    pos = 0
    while pos < len(plan):
        batch, busy = [], set()
        while pos < len(plan) and len(batch) < batch_size and plan[pos][0] not in busy:
            cid, op = plan[pos]
            busy.add(cid)
            batch.append((cid, clients[cid].invoke(op)))
            pos += 1
        result = ctx.handle_batch([env for _, env in batch])
        store.store(result.blob)
        if delay:
            time.sleep(delay * len(batch))
        for (cid, _), reply in zip(batch, result.replies):
            clients[cid].handle_reply(reply)
    return time.perf_counter() - started


def run_once(mode: str, spec: WorkloadSpec, store_mode: str = "async",
             batch_size: int = 16, workdir: str | Path | None = None) -> BenchRow:
    if mode not in MODES:
        raise ValueError(f"unknown bench mode {mode!r}; choose from {MODES}")
    if mode == "tmc-emulated" and spec.ops > TMC_MAX_OPS:
        spec = WorkloadSpec(**{**asdict(spec), "ops": TMC_MAX_OPS})
    if mode == "lcm-batch" and spec.clients < batch_size:
        # A client has at most one operation outstanding.
        spec = WorkloadSpec(**{**asdict(spec), "clients": batch_size})
    batch = batch_size if mode == "lcm-batch" else 1
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        store = FileStore(Path(tmp) / "blob", sync=store_mode == "sync")
        if mode == "baseline-no-lcm":
            seconds = _baseline(spec)
        else:
            seconds = _lcm(spec, store, batch, TMC_DELAY if mode == "tmc-emulated" else 0.0)
    return BenchRow(mode, store_mode, spec.clients, batch, spec.ops, spec.value_size,
                    seconds, spec.ops / seconds if seconds > 0 else float("inf"))


def run_bench(modes: Iterable[str] = MODES, spec: WorkloadSpec | None = None,
              store_mode: str = "async", batch_size: int = 16, repeats: int = 3,
              workdir: str | Path | None = None) -> list[BenchRow]:
    """Best of ``repeats`` per mode; modes are interleaved so drift hits all alike."""
    spec = spec or WorkloadSpec(ops=2000)
    modes = list(modes)
    best: dict[str, BenchRow] = {}
    for _ in range(repeats):
        for mode in modes:
            row = run_once(mode, spec, store_mode, batch_size, workdir)
            if mode not in best or row.ops_per_sec > best[mode].ops_per_sec:
                best[mode] = row
    return [best[m] for m in modes]


def write_csv(rows: list[BenchRow], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(BenchRow.__dataclass_fields__))
        writer.writeheader()
        for row in rows:
            writer.writerow(asdict(row))


def format_table(rows: list[BenchRow]) -> str:
    baseline = next((r.ops_per_sec for r in rows if r.mode == "baseline-no-lcm"), None)
    lines = [f"{'mode':<16} {'store':<6} {'batch':>5} {'ops':>6} {'ops/s':>12} {'vs baseline':>12}"]
    for r in rows:
        rel = f"{r.ops_per_sec / baseline:.2f}x" if baseline else "-"
        lines.append(f"{r.mode:<16} {r.store_mode:<6} {r.batch_size:>5} {r.ops:>6} "
                     f"{r.ops_per_sec:>12.1f} {rel:>12}")
    return "\n".join(lines)
