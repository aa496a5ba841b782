"""Scripted server misbehavior.

Every action fires when the host has received ``at`` invoke messages
(retries included, adversarial replays excluded). The host holds no keys,
so all it can do is drop, replay, reorder, restart, fork and reroute.
"""
from __future__ import annotations

import random
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError


@dataclass(frozen=True)
class Action:
    at: int

    name = "action"

    def describe(self) -> str:
        args = ", ".join(f"{k}={v}" for k, v in asdict(self).items() if v is not None)
        return f"{self.name}({args})"


@dataclass(frozen=True)
class DeliverFifo(Action):
    """Stop dropping and reordering; resume plain FIFO forwarding."""

    name = "deliver_fifo"


@dataclass(frozen=True)
class Drop(Action):
    kind: str = "reply"
    client: int | None = None
    count: int = 1

    name = "drop"


@dataclass(frozen=True)
class Replay(Action):
    """Re-send a message seen earlier.

    Invokes go to the instance currently serving ``to_client`` (default:
    the sender). Replies go back to the client. ``back`` counts from the
    most recent message of that kind for the client.
    """

    kind: str = "invoke"
    client: int = 1
    back: int = 0
    to_client: int | None = None

    name = "replay"


@dataclass(frozen=True)
class Reorder(Action):
    window: int = 3

    name = "reorder"


@dataclass(frozen=True)
class RestartContextFrom(Action):
    """Kill the instance serving ``client`` and start a new one from an old blob.

    ``version`` is absolute; ``back`` counts back from the latest version.
    With neither, the new instance loads the current blob (plain restart).
    """

    version: int | None = None
    back: int | None = None
    client: int = 1

    name = "restart_from"


@dataclass(frozen=True)
class ForkContexts(Action):
    """Split clients into groups, each served by its own instance.

    The first group keeps its instance. Every other group gets a new
    instance on a branched copy of storage at ``version``/``back``.
    """

    groups: tuple[tuple[int, ...], ...] = ((1,), (2,))
    version: int | None = None
    back: int | None = None

    name = "fork"


@dataclass(frozen=True)
class Route(Action):
    """Send ``client``'s future invokes to the instance serving ``to_client``."""

    client: int = 1
    to_client: int = 2

    name = "route"


@dataclass(frozen=True)
class CrashBeforeStore(Action):
    name = "crash_before_store"


@dataclass(frozen=True)
class CrashAfterStore(Action):
    name = "crash_after_store"


@dataclass(frozen=True)
class SubstituteBlob(Action):
    """Make the next load of ``client``'s lineage return an older blob."""

    version: int | None = None
    back: int | None = None
    client: int = 1

    name = "substitute_blob"


@dataclass(frozen=True)
class Migrate(Action):
    """Move the instance serving ``client`` to a fresh platform. Not an attack."""

    client: int = 1

    name = "migrate"


ACTIONS = {
    cls.name: cls
    for cls in (DeliverFifo, Drop, Replay, Reorder, RestartContextFrom, ForkContexts,
                Route, CrashBeforeStore, CrashAfterStore, SubstituteBlob, Migrate)
}

ATTACKS = ("drop", "replay", "reorder", "restart_from", "fork", "route",
           "crash_before_store", "crash_after_store", "substitute_blob")


@dataclass
class AdversaryScript:
    actions: list[Action] = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        self.actions = sorted(self.actions, key=lambda a: a.at)

    def __len__(self) -> int:
        return len(self.actions)

    def describe(self) -> list[str]:
        return [a.describe() for a in self.actions]


def action_from_dict(d: dict) -> Action:
    d = dict(d)
    name = d.pop("action", None)
    if name not in ACTIONS:
        raise ConfigError(f"unknown adversary action {name!r}")
    cls = ACTIONS[name]
    allowed = {f.name for f in fields(cls)}
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"{name}: unknown fields {sorted(extra)}")
    at = d.get("at")
    if not isinstance(at, int) or isinstance(at, bool) or at < 1:
        raise ConfigError(f"{name}: 'at' must be a positive host step, got {at!r}")
    if "groups" in d:
        d["groups"] = tuple(tuple(int(c) for c in g) for g in d["groups"])
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"{name}: {exc}") from None


def random_script(
    seed: int,
    budget: int,
    clients: int,
    steps: int,
    kinds: tuple[str, ...] = ATTACKS,
) -> AdversaryScript:
    """Up to ``budget`` random attacks spread over the first ``steps`` host steps."""
    rng = random.Random(seed)
    ids = list(range(1, clients + 1))
    actions: list[Action] = []
    for _ in range(rng.randint(0, budget) if budget else 0):
        at = rng.randint(1, max(1, steps))
        kind = rng.choice(kinds)
        if kind == "drop":
            actions.append(Drop(at, rng.choice(("invoke", "reply")), rng.choice(ids), rng.randint(1, 3)))
        elif kind == "replay":
            actions.append(Replay(at, rng.choice(("invoke", "reply")), rng.choice(ids),
                                  rng.randint(0, 3), rng.choice([None] + ids)))
        elif kind == "reorder":
            actions.append(Reorder(at, rng.randint(2, 5)))
        elif kind == "restart_from":
            actions.append(RestartContextFrom(at, back=rng.randint(0, 10), client=rng.choice(ids)))
        elif kind == "fork":
            shuffled = ids[:]
            rng.shuffle(shuffled)
            cut = rng.randint(1, len(shuffled) - 1) if len(shuffled) > 1 else 1
            groups = tuple(tuple(sorted(g)) for g in (shuffled[:cut], shuffled[cut:]) if g)
            actions.append(ForkContexts(at, groups, back=rng.randint(0, 10)))
        elif kind == "route":
            actions.append(Route(at, rng.choice(ids), rng.choice(ids)))
        elif kind == "crash_before_store":
            actions.append(CrashBeforeStore(at))
        elif kind == "crash_after_store":
            actions.append(CrashAfterStore(at))
        elif kind == "substitute_blob":
            actions.append(SubstituteBlob(at, back=rng.randint(0, 10), client=rng.choice(ids)))
    return AdversaryScript(actions, seed)
