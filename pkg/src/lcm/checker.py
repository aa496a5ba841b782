"""Offline checks over recorded traces.

Every execution in a trace names its chain position ``(t, h)`` and its
parent ``prev_h``, so executions form a tree rooted at the zero digest.
A client's view is the root path to the last position it accepted. The
checks here use that tree:

* :func:`check_fork_linearizable` replays each view through the KVS, checks
  results and real-time order, and checks that views sharing an operation
  agree on everything before it.
* :func:`stability_oracle` evaluates stability by brute force, straight
  from who has seen what.
* :func:`acknowledged_q` and :func:`literal_q` give, for every reply, the
  value a context could know and the value an omniscient observer would
  compute.
* :func:`verdict` combines detection with the fork-linearizability check.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable

from . import kvs
from . import trace as tr
from .context import majority_stable
from .crypto import H0
from .errors import MalformedTrace
from .linearizability import check_linearizable, history_op
from .trace import Trace, TraceEvent

OpKey = tuple[int, int]  # (client, op_id)


@dataclass
class Node:
    h: bytes
    prev_h: bytes
    t: int
    client: int
    op_id: int
    op: bytes
    result: bytes
    dummy: bool
    first_seq: int
    durable: bool


@dataclass
class CheckResult:
    ok: bool
    witness: str | None = None
    views: dict[int, list[bytes]] = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.ok


class History:
    """Execution tree plus per-operation invoke and response events."""

    def __init__(self, trace: Iterable[TraceEvent]):
        self.nodes: dict[bytes, Node] = {}
        self.invoke_seq: dict[OpKey, int] = {}
        self.invoke_op: dict[OpKey, tuple[bytes, bool]] = {}
        self.responses: dict[OpKey, TraceEvent] = {}
        self.last_invoked: dict[int, int] = {}
        self.clients: set[int] = set()
        self._paths: dict[bytes, tuple[bytes, ...]] = {H0: ()}
        for e in trace:
            if e.kind == tr.EXECUTE:
                self._add_execution(e)
            elif e.kind == tr.INVOKE:
                self._add_invoke(e)
            elif e.kind == tr.RESPONSE:
                self._add_response(e)

    def _add_execution(self, e: TraceEvent) -> None:
        if e.h is None or e.prev_h is None or e.t is None or e.client is None:
            raise MalformedTrace(f"event {e.seq}: execution without chain position")
        node = self.nodes.get(e.h)
        if node is None:
            self.nodes[e.h] = Node(e.h, e.prev_h, e.t, e.client, e.op_id, e.op or b"",
                                   e.result or b"", bool(e.dummy), e.seq, e.durable is not False)
        elif (node.prev_h, node.t, node.client) != (e.prev_h, e.t, e.client):
            raise MalformedTrace(f"event {e.seq}: two executions share a digest")
        elif e.durable is not False:
            node.durable = True

    def _add_invoke(self, e: TraceEvent) -> None:
        if e.client is None or e.op_id is None:
            raise MalformedTrace(f"event {e.seq}: invoke without client or op_id")
        key = (e.client, e.op_id)
        self.clients.add(e.client)
        if key not in self.invoke_seq:
            if e.op_id <= self.last_invoked.get(e.client, 0):
                raise MalformedTrace(f"event {e.seq}: op ids of client {e.client} not increasing")
            if e.client in self.last_invoked and \
                    (e.client, self.last_invoked[e.client]) not in self.responses:
                raise MalformedTrace(f"event {e.seq}: client {e.client} invoked with an operation outstanding")
            self.invoke_seq[key] = e.seq
            self.invoke_op[key] = (e.op or b"", bool(e.dummy))
            self.last_invoked[e.client] = e.op_id
        elif self.last_invoked[e.client] != e.op_id:
            raise MalformedTrace(f"event {e.seq}: retry of an operation that is not outstanding")

    def _add_response(self, e: TraceEvent) -> None:
        key = (e.client, e.op_id)
        if key not in self.invoke_seq:
            raise MalformedTrace(f"event {e.seq}: response without invoke")
        if key in self.responses:
            raise MalformedTrace(f"event {e.seq}: second response for {key}")
        if e.h is None or e.t is None:
            raise MalformedTrace(f"event {e.seq}: response without chain position")
        self.responses[key] = e

    def path(self, h: bytes) -> tuple[bytes, ...]:
        """Digests from the first operation down to ``h`` inclusive."""
        if h in self._paths:
            return self._paths[h]
        chain = []
        cur = h
        while cur not in self._paths:
            node = self.nodes.get(cur)
            if node is None:
                raise MalformedTrace(f"digest {cur.hex()[:16]} has no recorded execution")
            chain.append(cur)
            cur = node.prev_h
        base = self._paths[cur]
        for digest in reversed(chain):
            base = base + (digest,)
            self._paths[digest] = base
        return self._paths[h]

    def is_ancestor(self, a: bytes, b: bytes) -> bool:
        """True when ``a`` lies on the root path of ``b`` (or equals it)."""
        node = self.nodes[a]
        p = self.path(b)
        return len(p) >= node.t and p[node.t - 1] == a

    def views(self) -> dict[int, bytes]:
        """Each client's last accepted chain position."""
        last: dict[int, TraceEvent] = {}
        for e in self.responses.values():
            if e.client not in last or e.seq > last[e.client].seq:
                last[e.client] = e
        return {c: e.h for c, e in last.items()}

    def op_key(self, node: Node) -> OpKey:
        return node.client, node.op_id


# -- fork-linearizability -----------------------------------------------


def _structural_witness(hist: History, views: dict[int, bytes]) -> str | None:
    for key, r in sorted(hist.responses.items(), key=lambda kv: kv[1].seq):
        node = hist.nodes.get(r.h)
        if node is None:
            return f"response {r.seq} for {key} names a chain position no context produced"
        if node.t != r.t or node.client != r.client:
            return f"response {r.seq} for {key} disagrees with the execution at that position"
        op, dummy = hist.invoke_op[key]
        if node.op != op or node.dummy != dummy:
            return f"response {r.seq} for {key} belongs to a different operation"
        if not hist.is_ancestor(r.h, views[r.client]):
            return f"client {r.client}: accepted position t={r.t} is not in its final view"
    for c, h in views.items():
        own = [hist.nodes[r.h].t for k, r in sorted(hist.responses.items()) if k[0] == c]
        if own != sorted(own):
            return f"client {c}: own operations out of order in its view"
    return None


def _show(result: bytes) -> str:
    try:
        status, value = kvs.decode_result(result)
    except ValueError:
        return result.hex()
    name = {kvs.OK: "ok", kvs.NOT_FOUND: "not-found"}.get(status, "error")
    return name if value is None else f"{name}({value.hex()[:16]})"


def _replay_view(hist: History, path: list[bytes], removed: set[bytes],
                 client: int) -> str | None:
    state: dict = {}
    results = {r.h: r for r in hist.responses.values()}
    latest_invoke = -1
    for h in path:
        if h in removed:
            continue
        node = hist.nodes[h]
        key = hist.op_key(node)
        if not node.dummy:
            result, state = kvs.execute(state, node.op)
            r = results.get(h)
            if r is not None and r.result != result:
                return (f"view of client {client}: {key} at t={node.t} returned "
                        f"{_show(r.result)}, sequential replay gives {_show(result)}")
        r = results.get(h)
        if r is not None and r.seq < latest_invoke:
            return (f"view of client {client}: {key} at t={node.t} completed before "
                    f"an earlier-ordered operation was invoked")
        latest_invoke = max(latest_invoke, hist.invoke_seq.get(key, node.first_seq))
    return None


def check_fork_linearizable(trace: Trace | Iterable[TraceEvent]) -> CheckResult:
    hist = History(trace)
    heads = hist.views()
    witness = _structural_witness(hist, heads)
    if witness:
        return CheckResult(False, witness)
    paths = {c: list(hist.path(h)) for c, h in heads.items()}

    # An operation appearing at two positions across views is only
    # acceptable if one copy can be dropped from every view without
    # changing any result the clients saw.
    placements: dict[OpKey, set[bytes]] = {}
    for p in paths.values():
        for h in p:
            placements.setdefault(hist.op_key(hist.nodes[h]), set()).add(h)
    fixed: set[bytes] = set()
    choices: list[list[tuple[bytes, set[bytes]]]] = []
    for key, where in sorted(placements.items()):
        if len(where) < 2:
            continue
        r = hist.responses.get(key)
        if r is not None:
            fixed |= where - {r.h}
        else:
            choices.append([(keep, where - {keep}) for keep in sorted(where)])

    first_witness = None
    for combo in itertools.islice(itertools.product(*choices), 256):
        removed = set(fixed)
        for _, drop in combo:
            removed |= drop
        witness = None
        for c in sorted(paths):
            if paths[c] and paths[c][-1] in removed:
                witness = f"client {c}: last accepted operation duplicated in another view"
                break
            witness = _replay_view(hist, paths[c], removed, c)
            if witness:
                break
        if witness is None:
            return CheckResult(True, None, {c: [h for h in p if h not in removed]
                                            for c, p in paths.items()})
        first_witness = first_witness or witness
    if fixed or choices:
        dup = sorted(k for k, w in placements.items() if len(w) > 1)
        first_witness = f"{first_witness}; operations {dup} appear at several positions"
    return CheckResult(False, first_witness)


# -- stability -----------------------------------------------------------


def _client_count(hist: History, n: int | None) -> int:
    return n if n is not None else max(len(hist.clients), 1)


def stability_oracle(trace: Trace | Iterable[TraceEvent],
                     n: int | None = None) -> dict[tuple[int, int], int | None]:
    """Earliest event seq at which each completed operation is stable among a majority.

    Keys are ``(client, t)``. An operation is stable with respect to its
    owner once complete, and with respect to any other client once that
    client has accepted a strictly later position extending it. ``None``
    means it never became stable.
    """
    hist = History(trace)
    n = _client_count(hist, n)
    completed: dict[bytes, TraceEvent] = {r.h: r for r in hist.responses.values()}
    seen_by: dict[bytes, set[int]] = {h: set() for h in completed}
    out: dict[tuple[int, int], int | None] = {(r.client, r.t): None for r in completed.values()}

    def mark(h: bytes, client: int, seq: int) -> None:
        if h not in completed:
            return
        members = seen_by[h]
        members.add(client)
        r = completed[h]
        if h in owner_done and out[(r.client, r.t)] is None and len(members) * 2 > n:
            out[(r.client, r.t)] = seq

    owner_done: set[bytes] = set()
    for r in sorted(completed.values(), key=lambda e: e.seq):
        owner_done.add(r.h)
        mark(r.h, r.client, r.seq)
        for h in hist.path(r.h)[:-1]:
            mark(h, r.client, r.seq)
    return out


def acknowledged_q(trace: Trace | Iterable[TraceEvent],
                   n: int | None = None) -> dict[int, int]:
    """For each direct (non-cached) response seq, the q a context can know.

    A client acknowledges position s by invoking again after accepting s.
    Along the root path of the reply, client j's acknowledgment is the
    position of its second-to-last operation on that path.
    """
    hist = History(trace)
    n = _client_count(hist, n)
    out = {}
    for r in hist.responses.values():
        if r.detail == "cached":
            continue
        acks: dict[int, list[int]] = {}
        for h in hist.path(r.h):
            node = hist.nodes[h]
            acks.setdefault(node.client, []).append(node.t)
        values = [ts[-2] if len(ts) > 1 else 0 for ts in acks.values()]
        values += [0] * (n - len(values))
        out[r.seq] = majority_stable(values)
    return out


def literal_q(trace: Trace | Iterable[TraceEvent], n: int | None = None) -> dict[int, int]:
    """For each response seq, the largest t such that every operation up to t
    on the reply's path is stable among a majority just before the response."""
    hist = History(trace)
    n = _client_count(hist, n)
    seen: dict[bytes, set[int]] = {}
    out = {}
    for r in sorted(hist.responses.values(), key=lambda e: e.seq):
        path = hist.path(r.h)
        q = 0
        for h in path:
            if len(seen.get(h, ())) * 2 <= n:
                break
            q = hist.nodes[h].t
        out[r.seq] = q
        # r completes its own node and is a strictly later position for every ancestor
        for h in path:
            seen.setdefault(h, set()).add(r.client)
    return out


def check_stable_subsequence_linearizable(trace: Trace | Iterable[TraceEvent],
                                          n: int | None = None) -> CheckResult:
    """Linearizability of the operations that became majority-stable.

    Invoked operations that never completed are added as optional pending
    operations, since a stable operation may depend on one of them.
    """
    events = list(trace)
    hist = History(events)
    stable = stability_oracle(events, n)
    ops = []
    for key, seq in hist.invoke_seq.items():
        r = hist.responses.get(key)
        op_bytes, dummy = hist.invoke_op[key]
        if dummy:
            continue
        if r is None:
            op = history_op(key, op_bytes, seq)
        elif stable.get((r.client, r.t)) is not None:
            op = history_op(key, op_bytes, seq, r.seq, r.result)
        else:
            continue
        if op is not None:
            ops.append(op)
    ok, witness = check_linearizable(ops)
    return CheckResult(ok, witness)


# -- verdict -------------------------------------------------------------

OK = "ok"
DETECTED = "detected"
UNDETECTED = "undetected-inconsistency"


@dataclass
class Verdict:
    status: str
    detection: TraceEvent | None
    detected_at_op: int | None
    fork_linearizable: CheckResult
    before_detection: CheckResult
    violations: int

    @property
    def ok(self) -> bool:
        return self.status != UNDETECTED

    def summary(self) -> str:
        if self.status == UNDETECTED:
            return f"UNDETECTED inconsistency: {self.before_detection.witness}"
        if self.status == DETECTED:
            d = self.detection
            who = f"client {d.client}" if d.instance is None else f"instance {d.instance}"
            return f"DETECTED at op {self.detected_at_op} ({d.reason} by {who})"
        return "no violations, fork-linearizable"


def verdict(trace: Trace) -> Verdict:
    """Detection plus fork-linearizability of everything accepted before it.

    A run is acceptable when the views accepted before the first raised
    violation are fork-linearizable. Inconsistencies after that point are
    reported in ``fork_linearizable`` but do not change the status.
    """
    first = trace.first_violation()
    prefix = trace.until(first.seq) if first is not None else trace
    before = check_fork_linearizable(prefix)
    full = check_fork_linearizable(trace) if first is not None else before
    at_op = None
    if first is not None:
        at_op = sum(1 for e in trace.of_kind(tr.RESPONSE) if e.seq < first.seq) + 1
    if not before.ok:
        status = UNDETECTED
    elif first is not None:
        status = DETECTED
    else:
        status = OK
    return Verdict(status, first, at_op, full, before, len(trace.of_kind(tr.VIOLATION)))
