"""YCSB-style workload generation (default mix: workload A, 50% put / 50% get)."""
from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field

from . import kvs


@dataclass
class WorkloadSpec:
    clients: int = 3
    ops: int = 60  # total across all clients
    mix: dict[str, int] = field(default_factory=lambda: {"put": 50, "get": 50})
    objects: int = 10
    value_size: int = 16
    key_size: int = 8
    distribution: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        if self.clients < 1:
            raise ValueError("need at least one client")
        if self.ops < 0 or self.objects < 1 or self.value_size < 0:
            raise ValueError("ops, objects and value_size must be non-negative")
        unknown = set(self.mix) - {"put", "get", "del"}
        if unknown:
            raise ValueError(f"unknown operation kinds in mix: {sorted(unknown)}")
        if sum(self.mix.values()) != 100 or min(self.mix.values(), default=0) < 0:
            raise ValueError(f"operation mix must sum to 100, got {self.mix}")
        if self.distribution not in ("uniform", "zipfian"):
            raise ValueError(f"unknown key distribution {self.distribution!r}")

    def key(self, index: int) -> bytes:
        return f"user{index:0{max(self.key_size - 4, 1)}d}".encode()

    def _key_chooser(self, rng: random.Random):
        population = range(self.objects)
        if self.distribution == "uniform":
            return lambda: rng.randrange(self.objects)
        # YCSB's zipfian constant
        weights = [1.0 / (i + 1) ** 0.99 for i in population]
        cum = list(itertools.accumulate(weights))
        return lambda: rng.choices(population, cum_weights=cum)[0]

    def generate(self, rng: random.Random | None = None) -> dict[int, list[bytes]]:
        """Operation bytes for each client id (1-based), ops split round-robin."""
        rng = rng or random.Random(self.seed)
        kinds = list(self.mix)
        weights = [self.mix[k] for k in kinds]
        choose_key = self._key_chooser(rng)
        plan: dict[int, list[bytes]] = {c: [] for c in range(1, self.clients + 1)}
        for n in range(self.ops):
            kind = rng.choices(kinds, weights=weights)[0]
            key = self.key(choose_key())
            if kind == "put":
                op = kvs.put(key, rng.randbytes(self.value_size))
            elif kind == "get":
                op = kvs.get(key)
            else:
                op = kvs.delete(key)
            plan[n % self.clients + 1].append(op)
        return plan

    def load_phase(self, rng: random.Random | None = None) -> list[bytes]:
        """One put per object, like YCSB's load step."""
        rng = rng or random.Random(self.seed)
        return [kvs.put(self.key(i), rng.randbytes(self.value_size)) for i in range(self.objects)]
