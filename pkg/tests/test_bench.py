import pytest

from lcm.bench import MODES, TMC_DELAY, format_table, run_bench, run_once
from lcm.workload import WorkloadSpec


def test_every_mode_runs():
    rows = run_bench(MODES, WorkloadSpec(ops=40), repeats=1)
    assert [r.mode for r in rows] == list(MODES)
    assert all(r.ops_per_sec > 0 for r in rows)
    assert "vs baseline" in format_table(rows)


def test_tmc_is_bounded_by_counter_delay():
    row = run_once("tmc-emulated", WorkloadSpec(ops=5))
    assert row.ops_per_sec <= 1 / TMC_DELAY


def test_batch_mode_widens_client_pool():
    row = run_once("lcm-batch", WorkloadSpec(clients=2, ops=32), batch_size=8)
    assert row.clients == 8 and row.batch_size == 8


def test_unknown_mode():
    with pytest.raises(ValueError):
        run_once("warp", WorkloadSpec(ops=1))
