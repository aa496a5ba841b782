"""Scenario files: a TOML document describing one simulated run.

Top-level keys::

    name = "rollback"          # free text
    seed = 7
    clients = 3
    ops = 60                   # total operations across clients
    batch_size = 1             # 1..16
    store_mode = "sync"        # "sync" or "async"
    retry_timeout = 100        # simulated ms
    dummy_every = 0            # dummy op after every k real ops; 0 = never
    expect = "detected"        # optional: ok | detected | undetected-inconsistency

    [workload]                 # optional
    mix = { put = 50, get = 50 }
    objects = 10
    value_size = 16
    distribution = "uniform"   # or "zipfian"

    [[adversary]]              # zero or more, fired by host step count
    action = "restart_from"
    at = 30
    back = 5

Action names and their fields are listed in :mod:`lcm.adversary`.
"""
from __future__ import annotations

import re
import sys
from dataclasses import dataclass
from pathlib import Path

from .adversary import AdversaryScript, action_from_dict
from .checker import OK, DETECTED, UNDETECTED, Verdict, verdict
from .errors import ConfigError
from .simulator import SimConfig, SimResult, simulate
from .workload import WorkloadSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

TOP_KEYS = {"name", "seed", "clients", "ops", "batch_size", "store_mode", "retry_timeout",
            "max_retries", "dummy_every", "expect", "workload", "adversary"}
WORKLOAD_KEYS = {"mix", "objects", "value_size", "key_size", "distribution"}
EXPECTATIONS = (OK, DETECTED, UNDETECTED)


@dataclass
class Scenario:
    name: str
    config: SimConfig
    script: AdversaryScript
    expect: str | None = None
    path: Path | None = None

    def run(self) -> tuple[SimResult, Verdict]:
        result = simulate(self.config, self.script)
        return result, verdict(result.trace)


def _line_of(text: str, key: str, occurrence: int = 0) -> int | None:
    pattern = re.compile(rf"^[ \t]*(\[\[?\s*{re.escape(key)}\s*\]\]?|{re.escape(key)}\s*=)", re.M)
    matches = list(pattern.finditer(text))
    if len(matches) <= occurrence:
        return None
    return text.count("\n", 0, matches[occurrence].start()) + 1


def _int(doc: dict, key: str, default: int, text: str, minimum: int = 0) -> int:
    value = doc.get(key, default)
    if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
        raise ConfigError(f"{key} must be an integer >= {minimum}, got {value!r}",
                          _line_of(text, key))
    return value


def parse_scenario(text: str, path: Path | None = None) -> Scenario:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {getattr(exc, 'msg', exc)}",
                          getattr(exc, "lineno", None)) from None

    unknown = set(doc) - TOP_KEYS
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"unknown key {key!r}", _line_of(text, key))

    workload = doc.get("workload", {})
    if not isinstance(workload, dict):
        raise ConfigError("[workload] must be a table", _line_of(text, "workload"))
    unknown = set(workload) - WORKLOAD_KEYS
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"unknown workload key {key!r}", _line_of(text, key))

    seed = _int(doc, "seed", 0, text)
    try:
        spec = WorkloadSpec(
            clients=_int(doc, "clients", 3, text, 1),
            ops=_int(doc, "ops", 60, text),
            mix=dict(workload.get("mix", {"put": 50, "get": 50})),
            objects=workload.get("objects", 10),
            value_size=workload.get("value_size", 16),
            key_size=workload.get("key_size", 8),
            distribution=workload.get("distribution", "uniform"),
            seed=seed,
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc), _line_of(text, "workload")) from None

    dummy_every = _int(doc, "dummy_every", 0, text)
    try:
        config = SimConfig(
            workload=spec,
            seed=seed,
            batch_size=_int(doc, "batch_size", 1, text, 1),
            store_mode=doc.get("store_mode", "sync"),
            retry_timeout=_int(doc, "retry_timeout", 100, text, 1),
            max_retries=_int(doc, "max_retries", 10, text),
            dummy_every=dummy_every or None,
        )
    except ValueError as exc:
        key = "store_mode" if "store_mode" in str(exc) else "batch_size"
        raise ConfigError(str(exc), _line_of(text, key)) from None

    entries = doc.get("adversary", [])
    if not isinstance(entries, list):
        raise ConfigError("adversary entries must be [[adversary]] tables",
                          _line_of(text, "adversary"))
    actions = []
    for i, entry in enumerate(entries):
        try:
            actions.append(action_from_dict(entry))
        except ConfigError as exc:
            raise ConfigError(f"adversary entry {i + 1}: {exc}",
                              _line_of(text, "adversary", i)) from None

    expect = doc.get("expect")
    if expect is not None and expect not in EXPECTATIONS:
        raise ConfigError(f"expect must be one of {EXPECTATIONS}", _line_of(text, "expect"))

    name = str(doc.get("name", path.stem if path else "scenario"))
    return Scenario(name, config, AdversaryScript(actions, seed), expect, path)


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_scenario(text, path)
