import json

import pytest

from lcm.crypto import auth_encrypt, generate_key
from lcm.errors import MalformedTrace
from lcm.messages import SealedBlobPair
from lcm.storage import FileStore, StableStore
from lcm.trace import Trace, TraceEvent


def pair(tag: bytes) -> SealedBlobPair:
    key = generate_key()
    return SealedBlobPair(auth_encrypt(tag, key), auth_encrypt(tag, key))


def test_stable_store_keeps_history():
    store = StableStore()
    assert store.load() is None and store.latest is None
    blobs = [pair(bytes([i])) for i in range(4)]
    for i, b in enumerate(blobs):
        assert store.store(b, t=i) == i
    assert store.load() == blobs[-1]
    assert store.load(1) == blobs[1]
    assert store.resolve(back=2) == 1
    assert store.resolve(back=99) == 0
    assert store.resolve(version=99) == 3


def test_substitute_is_one_shot():
    store = StableStore()
    for i in range(3):
        store.store(pair(bytes([i])))
    store.substitute(0)
    store.store(pair(b"x"))
    assert store.next_load() == 0
    assert store.next_load() == 3


def test_branch_copies_prefix():
    store = StableStore()
    for i in range(5):
        store.store(pair(bytes([i])))
    fork = store.branch(7, 2)
    assert fork.lineage == 7 and fork.latest == 2
    fork.store(pair(b"f"))
    assert store.latest == 4 and fork.latest == 3


@pytest.mark.parametrize("sync", [False, True])
def test_file_store_roundtrip(tmp_path, sync):
    fs = FileStore(tmp_path / "blob", sync=sync)
    assert fs.load() is None
    b = pair(b"state")
    fs.store(b)
    assert fs.load() == b and fs.writes == 1


def sample_trace() -> Trace:
    tr = Trace()
    tr.add("invoke", 0, client=1, op_id=1, op=b"\x01\x00\x00\x00\x01a", retry=False, dummy=False)
    tr.add("execute", 1, client=1, op_id=1, t=1, h=b"\x01" * 32, prev_h=bytes(32),
           op=b"\x01\x00\x00\x00\x01a", result=b"\x01", dummy=False, durable=True, instance=0)
    tr.add("response", 2, client=1, op_id=1, t=1, q=0, h=b"\x01" * 32, result=b"\x01")
    return tr


def test_trace_roundtrip_is_exact():
    tr = sample_trace()
    again = Trace.loads(tr.dumps())
    assert again.events == tr.events
    assert again.dumps() == tr.dumps()


def test_trace_until_and_kinds():
    tr = sample_trace()
    assert [e.kind for e in tr.until(2)] == ["invoke", "execute"]
    assert len(tr.of_kind("response")) == 1
    assert tr.first_violation() is None


@pytest.mark.parametrize("line", [
    '{"seq": 0, "time": 0, "kind": "nonsense"}',
    '{"seq": 0, "time": 0, "kind": "invoke", "colour": 1}',
    '{"seq": 0, "time": 0, "kind": "invoke", "h": "zz"}',
    "not json",
])
def test_malformed_lines_rejected(line):
    with pytest.raises(MalformedTrace):
        Trace.loads(line)


def test_sequence_must_increase():
    a = json.dumps(TraceEvent(1, 0, "invoke").to_dict())
    b = json.dumps(TraceEvent(0, 0, "invoke").to_dict())
    with pytest.raises(MalformedTrace):
        Trace.loads(a + "\n" + b)


def test_write_and_read(tmp_path):
    tr = sample_trace()
    tr.write(tmp_path / "t.jsonl")
    assert Trace.read(tmp_path / "t.jsonl").events == tr.events
