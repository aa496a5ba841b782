"""Command-line entry point: ``lcm run | fuzz | bench | check``.

Exit codes: 0 when every checked run is acceptable (no violations, or a
violation was raised before any inconsistency), 1 on an undetected
inconsistency, 2 on configuration errors.
"""
from __future__ import annotations

import collections
import os
import sys
import time
from pathlib import Path

import click

from . import bench as bench_mod
from .adversary import ATTACKS, random_script
from .checker import UNDETECTED, verdict
from .errors import ConfigError, MalformedTrace
from .scenario import load_scenario
from .simulator import STORE_MODES, SimConfig, simulate
from .trace import Trace
from .workload import WorkloadSpec

OUTPUT_ENV = "LCM_OUTPUT_DIR"


def _output_dir(out: str | None) -> Path | None:
    chosen = out or os.environ.get(OUTPUT_ENV)
    if not chosen:
        return None
    path = Path(chosen)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _seed_range(text: str) -> range:
    """``"N"`` means seeds 0..N-1; ``"A:B"`` means A..B-1."""
    try:
        if ":" in text:
            lo, hi = text.split(":", 1)
            return range(int(lo), int(hi))
        return range(int(text))
    except ValueError:
        raise click.BadParameter(f"expected N or A:B, got {text!r}") from None


@click.group()
@click.version_option(package_name="lcm")
def main() -> None:
    """Rollback and fork detection for a trusted-context service."""


@main.command()
@click.argument("scenarios", nargs=-1, required=True, type=click.Path(dir_okay=False))
@click.option("--seed", type=int, help="Override the scenario seed.")
@click.option("--clients", type=click.IntRange(1), help="Override the client count.")
@click.option("--batch-size", type=click.IntRange(1, 16), help="Override the batch size.")
@click.option("--store-mode", type=click.Choice(STORE_MODES), help="Override the store mode.")
@click.option("--out", type=click.Path(file_okay=False),
              help=f"Write traces here (default: ${OUTPUT_ENV}, else nowhere).")
def run(scenarios, seed, clients, batch_size, store_mode, out) -> None:
    """Simulate SCENARIOS and check each trace."""
    out_dir = _output_dir(out)
    worst = 0
    for path in scenarios:
        try:
            scenario = load_scenario(path)
        except ConfigError as exc:
            click.echo(f"{path}: config error: {exc}", err=True)
            sys.exit(2)
        cfg = scenario.config
        if seed is not None:
            cfg.seed = cfg.workload.seed = seed
        if clients is not None:
            cfg.workload.clients = clients
        if batch_size is not None:
            cfg.batch_size = batch_size
        if store_mode is not None:
            cfg.store_mode = store_mode
        result, v = scenario.run()
        click.echo(f"{scenario.name}: {v.summary()}")
        if out_dir is not None:
            result.trace.write(out_dir / f"{scenario.name}.trace.jsonl")
        if v.status == UNDETECTED:
            worst = 1
    sys.exit(worst)


@main.command()
@click.option("--seeds", default="1000", show_default=True, help="N or A:B.")
@click.option("--budget", type=click.IntRange(0), default=8, show_default=True,
              help="Maximum adversary actions per script.")
@click.option("--ops", type=click.IntRange(1), default=100, show_default=True)
@click.option("--clients", type=click.IntRange(1), default=3, show_default=True)
@click.option("--batch-size", type=click.IntRange(1, 16), default=1, show_default=True)
@click.option("--store-mode", type=click.Choice(STORE_MODES), default="sync", show_default=True)
@click.option("--kinds", default=",".join(ATTACKS), show_default=True,
              help="Comma-separated attack kinds to draw from.")
@click.option("--out", type=click.Path(file_okay=False),
              help="Write traces of undetected runs here.")
def fuzz(seeds, budget, ops, clients, batch_size, store_mode, kinds, out) -> None:
    """Run random adversary scripts and check every trace."""
    kind_list = tuple(k for k in kinds.split(",") if k)
    unknown = set(kind_list) - set(ATTACKS)
    if unknown:
        raise click.BadParameter(f"unknown attack kinds {sorted(unknown)}", param_hint="--kinds")
    out_dir = _output_dir(out)
    counts: collections.Counter = collections.Counter()
    started = time.perf_counter()
    for seed in _seed_range(seeds):
        cfg = SimConfig(WorkloadSpec(clients=clients, ops=ops, seed=seed), seed=seed,
                        batch_size=batch_size, store_mode=store_mode)
        script = random_script(seed, budget, clients, ops + ops // 3, kind_list)
        result = simulate(cfg, script)
        v = verdict(result.trace)
        counts[v.status] += 1
        if v.status == UNDETECTED:
            click.echo(f"seed {seed}: {v.summary()}")
            click.echo(f"  script: {'; '.join(script.describe())}")
            if out_dir is not None:
                result.trace.write(out_dir / f"fuzz-{seed}.trace.jsonl")
    total = sum(counts.values())
    click.echo(f"{total} runs in {time.perf_counter() - started:.1f}s: "
               f"{counts['ok']} ok, {counts['detected']} detected, "
               f"{counts[UNDETECTED]} undetected")
    sys.exit(1 if counts[UNDETECTED] else 0)


@main.command()
@click.option("--modes", default=",".join(bench_mod.MODES), show_default=True)
@click.option("--store-mode", type=click.Choice(STORE_MODES), default="async", show_default=True)
@click.option("--clients", type=click.IntRange(1), default=3, show_default=True)
@click.option("--ops", type=click.IntRange(1), default=2000, show_default=True)
@click.option("--value-size", type=click.IntRange(0), default=16, show_default=True)
@click.option("--objects", type=click.IntRange(1), default=10, show_default=True)
@click.option("--batch-size", type=click.IntRange(1, 16), default=16, show_default=True)
@click.option("--repeats", type=click.IntRange(1), default=3, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), help="CSV output path.")
def bench(modes, store_mode, clients, ops, value_size, objects, batch_size, repeats,
          seed, out) -> None:
    """Measure relative throughput of each mode."""
    mode_list = [m for m in modes.split(",") if m]
    unknown = set(mode_list) - set(bench_mod.MODES)
    if unknown:
        raise click.BadParameter(f"unknown modes {sorted(unknown)}", param_hint="--modes")
    spec = WorkloadSpec(clients=clients, ops=ops, value_size=value_size, objects=objects,
                        seed=seed)
    rows = bench_mod.run_bench(mode_list, spec, store_mode, batch_size, repeats)
    click.echo(bench_mod.format_table(rows))
    if out is None and _output_dir(None) is not None:
        out = _output_dir(None) / f"bench-{store_mode}.csv"
    if out is not None:
        bench_mod.write_csv(rows, out)
        click.echo(f"wrote {out}")


@main.command()
@click.argument("trace_file", type=click.Path(exists=True, dir_okay=False))
def check(trace_file) -> None:
    """Check a recorded trace (JSON lines)."""
    try:
        trace = Trace.read(trace_file)
        v = verdict(trace)
    except MalformedTrace as exc:
        click.echo(f"{trace_file}: malformed trace: {exc}", err=True)
        sys.exit(2)
    click.echo(v.summary())
    sys.exit(1 if v.status == UNDETECTED else 0)
