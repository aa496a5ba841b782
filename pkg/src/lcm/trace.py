"""Trace events recorded by the simulator and read by the checker.

On disk a trace is JSON lines, one event per line. Byte fields are hex.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import IO, Iterable, Iterator

from .errors import MalformedTrace

INVOKE = "invoke"
RESPONSE = "response"
VIOLATION = "violation"
CONTEXT_RESTART = "context-restart"
FORK = "fork"
STORE = "store"
LOAD = "load"
EXECUTE = "execute"
STALL = "stall"
ADVERSARY = "adversary"
MIGRATE = "migrate"

KINDS = {
    INVOKE, RESPONSE, VIOLATION, CONTEXT_RESTART, FORK, STORE, LOAD,
    EXECUTE, STALL, ADVERSARY, MIGRATE,
}

_BYTES_FIELDS = {"h", "prev_h", "op", "result"}


@dataclass(frozen=True)
class TraceEvent:
    seq: int
    time: int
    kind: str
    client: int | None = None
    op_id: int | None = None
    instance: int | None = None
    lineage: int | None = None
    version: int | None = None
    t: int | None = None
    q: int | None = None
    h: bytes | None = None
    prev_h: bytes | None = None
    op: bytes | None = None
    result: bytes | None = None
    retry: bool | None = None
    dummy: bool | None = None
    durable: bool | None = None
    reason: str | None = None
    detail: str | None = None

    def to_dict(self) -> dict:
        out = {}
        for key, value in asdict(self).items():
            if value is None:
                continue
            out[key] = value.hex() if key in _BYTES_FIELDS else value
        return out

    @classmethod
    def from_dict(cls, d: dict) -> TraceEvent:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise MalformedTrace(f"unknown fields {sorted(unknown)}")
        try:
            kw = {k: (bytes.fromhex(v) if k in _BYTES_FIELDS else v) for k, v in d.items()}
            event = cls(**kw)
        except (TypeError, ValueError) as exc:
            raise MalformedTrace(str(exc)) from None
        if event.kind not in KINDS:
            raise MalformedTrace(f"unknown event kind {event.kind!r}")
        return event


class Trace:
    """Append-only event log with a total order given by ``seq``."""

    def __init__(self, events: Iterable[TraceEvent] = ()):
        self.events: list[TraceEvent] = list(events)

    def add(self, kind: str, time: int, **kw) -> TraceEvent:
        event = TraceEvent(len(self.events), time, kind, **kw)
        self.events.append(event)
        return event

    def __iter__(self) -> Iterator[TraceEvent]:
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def of_kind(self, *kinds: str) -> list[TraceEvent]:
        return [e for e in self.events if e.kind in kinds]

    def until(self, seq: int) -> Trace:
        """Events strictly before ``seq``."""
        return Trace(e for e in self.events if e.seq < seq)

    def first_violation(self) -> TraceEvent | None:
        return next((e for e in self.events if e.kind == VIOLATION), None)

    def dumps(self) -> str:
        return "".join(json.dumps(e.to_dict(), sort_keys=True) + "\n" for e in self.events)

    def write(self, dest: str | Path | IO[str]) -> None:
        if hasattr(dest, "write"):
            dest.write(self.dumps())
        else:
            Path(dest).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> Trace:
        events = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                events.append(TraceEvent.from_dict(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise MalformedTrace(f"line {lineno}: {exc}") from None
            except MalformedTrace as exc:
                raise MalformedTrace(f"line {lineno}: {exc}") from None
        seqs = [e.seq for e in events]
        if seqs != sorted(seqs) or len(set(seqs)) != len(seqs):
            raise MalformedTrace("event sequence numbers are not strictly increasing")
        return cls(events)

    @classmethod
    def read(cls, path: str | Path) -> Trace:
        return cls.loads(Path(path).read_text())
