"""Acceptance criteria A1-A9.

Each test records a one-line PASS/FAIL summary that the conftest prints at
the end of the run. Run alone with ``pytest tests/test_acceptance.py`` or
``python tests/test_acceptance.py``.
"""
import random
import sys
import time
from contextlib import contextmanager

import pytest

from lcm import kvs
from lcm import trace as tr
from lcm.adversary import (
    AdversaryScript,
    CrashAfterStore,
    CrashBeforeStore,
    ForkContexts,
    Migrate,
    RestartContextFrom,
    Route,
    random_script,
)
from lcm.bench import TMC_DELAY, run_bench, run_once
from lcm.checker import (
    DETECTED,
    OK,
    UNDETECTED,
    History,
    acknowledged_q,
    literal_q,
    stability_oracle,
    verdict,
)
from lcm.client import LcmClient
from lcm.context import TrustedContext
from lcm.crypto import (
    KEY_SIZE,
    Envelope,
    PlatformIdentity,
    auth_decrypt,
    auth_encrypt,
    chain_hash,
    generate_key,
)
from lcm.errors import AuthenticationFailure, MalformedMessage
from lcm.messages import (
    ADD_CLIENT,
    REMOVE_CLIENT,
    AdminCommand,
    ContextStateSnapshot,
    InvokeMessage,
    OperationRequest,
    ReplyMessage,
    SealedBlobPair,
    VEntry,
)
from lcm.simulator import SimConfig, simulate
from lcm.workload import WorkloadSpec

FUZZ_SEEDS = 1000
FUZZ_BUDGET = 8
FUZZ_OPS = 100


@contextmanager
def criterion(report, name):
    detail = {"summary": ""}
    try:
        yield detail
    except BaseException as exc:
        msg = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
        report[name] = (False, msg[:200])
        print(f"{name} FAIL: {msg[:200]}")
        raise
    report[name] = (True, detail["summary"])
    print(f"{name} PASS: {detail['summary']}")


def config(clients, ops, seed, **kw):
    return SimConfig(WorkloadSpec(clients=clients, ops=ops, seed=seed), seed=seed, **kw)


def last_response_t(trace, client, before_seq):
    t = 0
    for e in trace.of_kind(tr.RESPONSE):
        if e.client == client and e.seq < before_seq:
            t = e.t
    return t


# -- A1 ----------------------------------------------------------------------


def test_a1_rollback_detection(acceptance_report):
    with criterion(acceptance_report, "A1") as d:
        started = time.perf_counter()
        seed, step = 11, 30
        control = simulate(config(3, 60, seed))
        assert not control.violations, "control run raised a violation"
        assert verdict(control.trace).status == OK

        probe = simulate(config(3, 60, seed), AdversaryScript([RestartContextFrom(step, version=0)]))
        restart = next(e for e in probe.trace.of_kind(tr.CONTEXT_RESTART)
                       if e.reason == "adversary-restart")
        versions = sum(1 for e in probe.trace.of_kind(tr.STORE) if e.seq < restart.seq)

        detected = expected = 0
        for v in range(versions):
            res = simulate(config(3, 60, seed), AdversaryScript([RestartContextFrom(step, version=v)]))
            trace = res.trace
            restart = next(e for e in trace.of_kind(tr.CONTEXT_RESTART)
                           if e.reason == "adversary-restart")
            t_v = res.lineages[0].store.versions[v].t
            # Replies still in flight from the old context count: they reach the client later.
            old_t = {}
            for r in trace.of_kind(tr.RESPONSE):
                if r.instance != restart.instance:
                    old_t[r.client] = max(old_t.get(r.client, 0), r.t)
            ahead = {c for c, t in old_t.items() if t > t_v}
            after = [e for e in trace.of_kind(tr.VIOLATION) if e.seq > restart.seq]
            v_status = verdict(trace).status
            assert v_status != UNDETECTED, f"version {v}: undetected inconsistency"
            if not ahead:
                assert not after, f"version {v}: false positive {after[0].reason}"
                continue
            expected += 1
            assert after, f"version {v}: rollback to t={t_v} not detected"
            first = after[0]
            assert first.instance == restart.instance and first.reason == "ViewMismatch"
            # The rejected invocation came from a client whose view is ahead of the blob.
            assert last_response_t(trace, first.client, first.seq) > t_v
            # Nobody ahead of the blob ever accepts a reply from the restarted context.
            for r in trace.of_kind(tr.RESPONSE):
                if r.seq > restart.seq and r.instance == restart.instance:
                    assert r.client not in ahead, \
                        f"version {v}: client {r.client} accepted a reply from the rolled-back context"
            detected += 1
        elapsed = time.perf_counter() - started
        assert expected >= versions - 2, "too few rollback targets were behind the clients"
        assert elapsed < 10, f"took {elapsed:.1f}s"
        d["summary"] = (f"{detected}/{expected} rollbacks detected over {versions} blob versions, "
                        f"0 false positives, {elapsed:.1f}s")


# -- A2 ----------------------------------------------------------------------

FORK_CATALOG = [
    (2, ((1,), (2,))),
    (3, ((1, 2), (3,))),
    (3, ((1,), (2, 3))),
    (5, ((1, 2, 3), (4, 5))),
    (5, ((1, 2), (3, 4, 5))),
    (5, ((1,), (2, 3, 4, 5))),
]


def _node_lineage(trace):
    first = {}
    for e in trace.of_kind(tr.EXECUTE):
        first.setdefault(e.h, (e.seq, e.lineage))
    return first


@pytest.mark.parametrize("join", [False, True], ids=["forever-forked", "joined"])
def test_a2_fork_detection(acceptance_report, join):
    name = "A2"
    with criterion(acceptance_report, name) as d:
        runs = forked = detected_joins = 0
        scripts = 0
        for n, groups in FORK_CATALOG:
            for back in (0, 2):
                scripts += 1
                actions = [ForkContexts(15, groups, back=back)]
                if join:
                    actions.append(Route(35, groups[1][0], groups[0][0]))
                for seed in range(3):
                    res = simulate(config(n, 30 * n, seed), AdversaryScript(actions))
                    trace = res.trace
                    v = verdict(trace)
                    runs += 1
                    assert v.status != UNDETECTED, f"n={n} {groups} seed {seed}: {v.summary()}"
                    fork = trace.of_kind(tr.FORK)[0]
                    lineage_of = _node_lineage(trace)
                    if not join:
                        stable = stability_oracle(trace, n)
                        for group in groups:
                            if len(group) * 2 > n:
                                continue
                            post = [r for r in trace.of_kind(tr.RESPONSE)
                                    if r.client in group and lineage_of[r.h][0] > fork.seq]
                            forked += len(post)
                            for r in post:
                                assert stable[(r.client, r.t)] is None, \
                                    f"minority op {(r.client, r.t)} became stable"
                                later_q = [e.q for e in trace.of_kind(tr.RESPONSE)
                                           if e.client == r.client and e.seq > r.seq]
                                assert all(q < r.t for q in later_q), \
                                    "client was told a minority op is stable"
                        continue
                    moved = groups[1][0]
                    route = next((e for e in trace.of_kind(tr.ADVERSARY) if e.reason == "route"), None)
                    assert route is not None, f"n={n} seed {seed}: run ended before the join"
                    target = res.instances[res.route[groups[0][0]]].lineage.id
                    own = [r for r in trace.of_kind(tr.RESPONSE)
                           if r.client == moved and fork.seq < lineage_of[r.h][0] < route.seq
                           and lineage_of[r.h][1] != target]
                    if not own:
                        continue
                    home = lineage_of[own[-1].h][1]
                    flagged = [e for e in trace.of_kind(tr.VIOLATION)
                               if e.seq > route.seq and e.client == moved]
                    assert flagged, f"n={n} {groups} seed {seed}: join not detected"
                    for r in trace.of_kind(tr.RESPONSE):
                        if r.client == moved and r.seq > route.seq:
                            assert lineage_of[r.h][1] == home, "accepted a reply across the partition"
                    detected_joins += 1
        assert scripts >= 10 or join
        kind = "joined" if join else "forever-forked"
        extra = (f"{detected_joins} joins detected at first cross-partition delivery" if join
                 else f"{forked} minority ops checked, none stable")
        prev = acceptance_report.get(name, (True, ""))[1] if join else ""
        d["summary"] = (f"{prev + '; ' if prev else ''}{kind}: {scripts} scripts x 3 seeds "
                        f"(n in 2,3,5), 0 undetected, {extra}")


# -- A3 / A4 -------------------------------------------------------------------


@pytest.fixture(scope="module")
def fuzz_runs():
    started = time.perf_counter()
    attacked, control = [], []
    for seed in range(FUZZ_SEEDS):
        script = random_script(seed, FUZZ_BUDGET, 3, FUZZ_OPS + FUZZ_OPS // 3)
        attacked.append((seed, script, simulate(config(3, FUZZ_OPS, seed), script).trace))
        control.append((seed, simulate(config(3, FUZZ_OPS, seed)).trace))
    return attacked, control, time.perf_counter() - started


def test_a3_fuzzed_soundness(acceptance_report, fuzz_runs):
    with criterion(acceptance_report, "A3") as d:
        attacked, control, sim_time = fuzz_runs
        started = time.perf_counter()
        statuses = {OK: 0, DETECTED: 0, UNDETECTED: 0}
        undetected = []
        for seed, script, trace in attacked:
            v = verdict(trace)
            statuses[v.status] += 1
            if v.status == UNDETECTED:
                undetected.append((seed, script.describe(), v.summary()))
        false_alarms = [seed for seed, trace in control if trace.first_violation() is not None]
        control_bad = [seed for seed, trace in control if verdict(trace).status != OK]
        elapsed = sim_time + time.perf_counter() - started
        assert not undetected, f"{len(undetected)} undetected, first: {undetected[0]}"
        assert not false_alarms, f"correct host raised violations on seeds {false_alarms[:5]}"
        assert not control_bad
        assert elapsed < 300, f"took {elapsed:.0f}s"
        d["summary"] = (f"{FUZZ_SEEDS} scripts: {statuses[OK]} ok, {statuses[DETECTED]} detected, "
                        f"0 undetected; {FUZZ_SEEDS} control runs: 0 violations; {elapsed:.0f}s")


def test_a4_stability_equivalence(acceptance_report, fuzz_runs):
    with criterion(acceptance_report, "A4") as d:
        attacked, control, _ = fuzz_runs
        replies = below_literal = 0
        for seed, trace in control:
            ack, lit = acknowledged_q(trace, 3), literal_q(trace, 3)
            for r in trace.of_kind(tr.RESPONSE):
                assert r.detail != "cached"
                replies += 1
                assert r.q == ack[r.seq], f"seed {seed}: q={r.q}, oracle {ack[r.seq]}"
                assert r.q <= lit[r.seq], f"seed {seed}: q={r.q} above literal {lit[r.seq]}"
                below_literal += r.q < lit[r.seq]
        for traces in ([t for _, t in control], [t for _, _, t in attacked]):
            for trace in traces:
                last = {}
                for r in trace.of_kind(tr.RESPONSE):
                    assert r.q >= last.get(r.client, 0), "q decreased"
                    last[r.client] = r.q
        d["summary"] = (f"{replies} replies: q equals the acknowledged-view oracle in all; "
                        f"{below_literal} lag the literal definition (owner-ack divergence), "
                        f"none exceed it; q monotone on {2 * FUZZ_SEEDS} traces")


# -- A5 ----------------------------------------------------------------------


def _replay_head(trace, h):
    hist = History(trace)
    state = {}
    for digest in hist.path(h):
        node = hist.nodes[digest]
        if not node.dummy:
            _, state = kvs.execute(state, node.op)
    return state


@pytest.mark.parametrize("crash", [CrashBeforeStore, CrashAfterStore], ids=lambda c: c.name)
def test_a5_crash_exactly_once(acceptance_report, crash):
    with criterion(acceptance_report, "A5") as d:
        rng = random.Random(5)
        reexecuted = 0
        for seed in range(100):
            res = simulate(config(3, 60, seed), AdversaryScript([crash(rng.randint(5, 50))]))
            trace = res.trace
            assert verdict(trace).status == OK and not res.violations
            assert any(e.reason.startswith("crash") for e in trace.of_kind(tr.CONTEXT_RESTART))
            assert all(sc.done for sc in res.clients.values()), f"seed {seed}: clients stuck"
            durable, raw = {}, {}
            for e in trace.of_kind(tr.EXECUTE):
                key = (e.client, e.op_id)
                raw[key] = raw.get(key, 0) + 1
                durable[key] = durable.get(key, 0) + bool(e.durable)
            done = {(r.client, r.op_id) for r in trace.of_kind(tr.RESPONSE)}
            assert set(durable) == done
            assert all(count == 1 for count in durable.values()), f"seed {seed}: {durable}"
            if crash is CrashAfterStore:
                assert all(count == 1 for count in raw.values()), f"seed {seed}: {raw}"
            reexecuted += sum(count - 1 for count in raw.values())
            assert res.app.calls == len(trace.of_kind(tr.EXECUTE))
            ctx = res.serving_instance().ctx
            assert ctx.s == _replay_head(trace, ctx.h)
        prev = acceptance_report.get("A5", (True, ""))[1] if crash is CrashAfterStore else ""
        part = (f"{crash.name}: 100 runs, 1 durable execution per op, final KVS = replay"
                f" ({reexecuted} executions discarded with their unstored state)")
        d["summary"] = f"{prev}; {part}" if prev else part


# -- A6 ----------------------------------------------------------------------


def test_a6_migration(acceptance_report):
    with criterion(acceptance_report, "A6") as d:
        rng = random.Random(6)
        for seed in range(20):
            res = simulate(config(3, 60, seed), AdversaryScript([Migrate(rng.randint(15, 45))]))
            trace = res.trace
            v = verdict(trace)
            assert v.status == OK and v.fork_linearizable.ok, v.summary()
            assert all(sc.done for sc in res.clients.values())
            move = trace.of_kind(tr.MIGRATE)[0]
            lineage = res.lineages[move.lineage]
            stores = trace.of_kind(tr.STORE)
            old = [e.version for e in stores if e.seq < move.seq]
            new = [e.version for e in stores if e.seq > move.seq]
            probe = TrustedContext(lineage.platform)
            with pytest.raises(AuthenticationFailure):
                probe.init(lineage.store.load(old[-1]))
            ok = TrustedContext(lineage.platform)
            ok.init(lineage.store.load(new[-1]))
            assert ok.t == res.serving_instance().ctx.t
        d["summary"] = "20/20 seeds: all ops complete, views fork-linearizable, old blob rejected"


# -- A7 ----------------------------------------------------------------------


def test_a7_constant_overhead(acceptance_report):
    with criterion(acceptance_report, "A7") as d:
        k_C = generate_key()
        ctx = TrustedContext(PlatformIdentity.create("a7"))
        ctx.init(None)
        ctx.bootstrap(generate_key(), k_C, [1])
        client = LcmClient(1, k_C)
        invoke_delta, reply_delta = set(), set()
        for size in range(100, 2501, 100):
            value = bytes(size)
            for op in (kvs.put(b"key", value), kvs.get(b"key")):
                env = client.invoke(op)
                invoke_delta.add(len(env) - len(op))
                reply, _ = ctx.handle_invoke(env)
                result = client.handle_reply(reply).result
                reply_delta.add(len(reply) - len(result))
        assert len(invoke_delta) == 1 and len(reply_delta) == 1, (invoke_delta, reply_delta)
        d["summary"] = (f"invoke +{invoke_delta.pop()} bytes, reply +{reply_delta.pop()} bytes "
                        f"for values 100..2500")


# -- A8 ----------------------------------------------------------------------


def test_a8_throughput_ordering(acceptance_report, tmp_path):
    with criterion(acceptance_report, "A8") as d:
        spec = WorkloadSpec(clients=3, ops=1000, seed=8)
        ratios = []
        for run in range(5):
            plain = {r.mode: r.ops_per_sec for r in
                     run_bench(["baseline-no-lcm", "lcm"], spec, "async", repeats=2, workdir=tmp_path)}
            synced = {r.mode: r.ops_per_sec for r in
                      run_bench(["lcm", "lcm-batch"], spec, "sync", repeats=2, workdir=tmp_path)}
            tmc = run_once("tmc-emulated", spec, "sync", workdir=tmp_path).ops_per_sec
            assert plain["baseline-no-lcm"] >= plain["lcm"], f"run {run}: baseline < lcm"
            assert plain["lcm"] >= synced["lcm"], f"run {run}: lcm < lcm-sync"
            assert synced["lcm-batch"] > synced["lcm"], f"run {run}: batch16 <= lcm (sync)"
            assert tmc <= 1 / TMC_DELAY, f"run {run}: tmc {tmc:.1f} ops/s"
            ratios.append((plain["lcm"] / plain["baseline-no-lcm"],
                           synced["lcm-batch"] / synced["lcm"], tmc))
        lcm_ratio = sum(r[0] for r in ratios) / 5
        batch_gain = sum(r[1] for r in ratios) / 5
        d["summary"] = (f"ordering held 5/5 runs; lcm/baseline {lcm_ratio:.2f}x, "
                        f"batch16/lcm (fsync) {batch_gain:.1f}x, tmc <= {max(r[2] for r in ratios):.1f} ops/s")


# -- A9 ----------------------------------------------------------------------

CASES = 10_000


def test_a9_crypto_envelope_cases(acceptance_report):
    with criterion(acceptance_report, "A9") as d:
        rng = random.Random(9)
        for _ in range(CASES):
            key = rng.randbytes(KEY_SIZE)
            data = rng.randbytes(rng.randint(0, 512))
            wire = auth_encrypt(data, key).to_bytes()
            assert auth_decrypt(Envelope.from_bytes(wire), key) == data
            flipped = bytearray(wire)
            bit = rng.randrange(len(wire) * 8)
            flipped[bit // 8] ^= 1 << (bit % 8)
            with pytest.raises(AuthenticationFailure):
                auth_decrypt(Envelope.from_bytes(bytes(flipped)), key)
            other = bytes([key[0] ^ 1]) + key[1:]
            with pytest.raises(AuthenticationFailure):
                auth_decrypt(Envelope.from_bytes(wire), other)
            prev = rng.randbytes(32)
            t, cid = rng.randint(1, 2**63), rng.randint(1, 2**32 - 1)
            assert chain_hash(prev, data, t, cid) == chain_hash(prev, data, t, cid)
            assert chain_hash(prev, data, t, cid) != chain_hash(prev, data + b"\x00", t, cid)
        d["summary"] = f"crypto envelope: {CASES} cases"


def _random_message(rng):
    kind = rng.randrange(5)
    digest = lambda: rng.randbytes(32)  # noqa: E731
    if kind == 0:
        dummy = rng.random() < 0.2
        op = b"" if dummy else rng.randbytes(rng.randint(1, 300))
        req = OperationRequest(op, dummy, rng.random() < 0.5)
        return InvokeMessage(rng.randint(0, 2**64 - 1), digest(), req, rng.randint(1, 2**32 - 1))
    if kind == 1:
        t = rng.randint(0, 2**64 - 1)
        return ReplyMessage(t, digest(), rng.randbytes(rng.randint(0, 300)), rng.randint(0, t), digest())
    if kind == 2:
        V = {}
        for cid in rng.sample(range(1, 1000), rng.randint(0, 8)):
            t_last = rng.randint(0, 2**40)
            V[cid] = VEntry(rng.randint(0, t_last), t_last, digest(), rng.randbytes(rng.randint(0, 40)))
        return ContextStateSnapshot(rng.randbytes(rng.randint(0, 300)), V, rng.randbytes(16),
                                    rng.randint(0, 2**40), digest())
    if kind == 3:
        if rng.random() < 0.5:
            return AdminCommand(ADD_CLIENT, rng.randint(1, 2**32 - 1))
        return AdminCommand(REMOVE_CLIENT, rng.randint(1, 2**32 - 1), rng.randbytes(16))
    key = rng.randbytes(16)
    return SealedBlobPair(auth_encrypt(rng.randbytes(16), key),
                          auth_encrypt(rng.randbytes(rng.randint(0, 200)), key))


def test_a9_protocol_types_cases(acceptance_report):
    with criterion(acceptance_report, "A9") as d:
        rng = random.Random(99)
        for _ in range(CASES):
            msg = _random_message(rng)
            encoded = msg.to_bytes()
            decoded = type(msg).from_bytes(encoded)
            assert decoded == msg and decoded.to_bytes() == encoded
            cut = rng.randrange(len(encoded))
            with pytest.raises(MalformedMessage):
                type(msg).from_bytes(encoded[:cut])
        prev = acceptance_report.get("A9", (True, ""))[1]
        d["summary"] = f"{prev}; protocol types: {CASES} cases" if prev else f"protocol types: {CASES} cases"


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
