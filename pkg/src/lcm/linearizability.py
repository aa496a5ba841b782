"""Black-box linearizability check for key-value histories.

Linearizability is a local property, so each key is checked on its own as
a register that may be absent. Per key we run the Wing-Gong search with
memoization on (linearized set, register value). Operations that never
completed are optional: they may take effect at any point after their
invocation, or not at all.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

from . import kvs

INF = float("inf")


@dataclass(frozen=True)
class HistoryOp:
    id: object
    kind: int
    key: bytes
    value: bytes | None
    invoke: float
    response: float = INF  # INF: never completed
    result: bytes | None = None

    @property
    def pending(self) -> bool:
        return self.response == INF


def _apply(kind: int, value: bytes | None, state: bytes | None) -> tuple[bytes, bytes | None]:
    if kind == kvs.GET:
        if state is None:
            return kvs.encode_result(kvs.NOT_FOUND), state
        return kvs.encode_result(kvs.OK, state), state
    if kind == kvs.PUT:
        return kvs.encode_result(kvs.OK), value
    if state is None:
        return kvs.encode_result(kvs.NOT_FOUND), None
    return kvs.encode_result(kvs.OK), None


def check_register(ops: list[HistoryOp]) -> tuple[bool, str | None]:
    ops = sorted(ops, key=lambda o: o.invoke)
    n = len(ops)
    required = 0
    for i, op in enumerate(ops):
        if not op.pending:
            required |= 1 << i
    seen: set[tuple[int, bytes | None]] = set()
    stack: list[tuple[int, bytes | None]] = [(0, None)]
    while stack:
        done, state = stack.pop()
        if done & required == required:
            return True, None
        if (done, state) in seen:
            continue
        seen.add((done, state))
        # Anything invoked after the earliest outstanding response cannot go next.
        horizon = min(
            (ops[i].response for i in range(n) if not done >> i & 1 and not ops[i].pending),
            default=INF,
        )
        for i in range(n):
            if done >> i & 1:
                continue
            op = ops[i]
            if op.invoke > horizon:
                break
            result, new_state = _apply(op.kind, op.value, state)
            if not op.pending and result != op.result:
                continue
            stack.append((done | 1 << i, new_state))
    key = ops[0].key if ops else b""
    return False, f"no linearization for key {key!r} over {n} operations"


def check_linearizable(ops: list[HistoryOp]) -> tuple[bool, str | None]:
    by_key: dict[bytes, list[HistoryOp]] = defaultdict(list)
    for op in ops:
        by_key[op.key].append(op)
    for key in sorted(by_key):
        ok, witness = check_register(by_key[key])
        if not ok:
            return False, witness
    return True, None


def history_op(id, op_bytes: bytes, invoke: float, response: float = INF,
               result: bytes | None = None) -> HistoryOp | None:
    """Build a :class:`HistoryOp` from encoded bytes; ``None`` for non-KVS ops."""
    try:
        op = kvs.KvsOperation.from_bytes(op_bytes)
    except kvs.MalformedOperation:
        return None
    return HistoryOp(id, op.kind, op.key, op.value, invoke, response, result)
