"""
BDB roles and the scripted coalition.

Deceitful and Byzantine processes are simulated as split-brain replicas: one
replica per honest partition, all sharing the process's key. Each replica
runs the honest state machine with attack-specific inputs and only talks to
its own side, so whatever it signs conflicts with its twins' messages in the
same slots. Byzantine replicas additionally drop and garble their sends.
Benign processes never conflict; they crash, omit or lag.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional

import numpy as np

from config import BYZANTINE_DROP_FRACTION, BYZANTINE_GARBLE_FRACTION, STALE_LAG_FACTOR
from signing import ProcessId, SignedMessage

logger = logging.getLogger(__name__)

Actor = tuple  # (ProcessId, side)


class Role(str, Enum):
    HONEST = "honest"
    BENIGN = "benign"
    DECEITFUL = "deceitful"
    BYZANTINE = "byzantine"


class Attack(str, Enum):
    NONE = "none"
    RELIABLE_BROADCAST = "reliable-broadcast-attack"
    BINARY_CONSENSUS = "binary-consensus-attack"


class BenignKind(str, Enum):
    CRASH_AT = "crash-at"
    OMIT_FRACTION = "omit-fraction"
    STALE = "stale"


@dataclass(frozen=True)
class BenignBehavior:
    kind: BenignKind = BenignKind.CRASH_AT
    value: float = 0.0

    @classmethod
    def parse(cls, text: str) -> "BenignBehavior":
        """"crash-at:250", "omit-fraction:0.3" or "stale"."""
        name, _, arg = str(text).partition(":")
        kind = BenignKind(name.strip())
        if kind == BenignKind.STALE:
            return cls(kind, 0.0)
        value = float(arg) if arg else 0.0
        if kind == BenignKind.OMIT_FRACTION and not 0 <= value <= 1:
            raise ValueError("omit fraction must lie in [0, 1]")
        return cls(kind, value)

    def label(self) -> str:
        return self.kind.value if self.kind == BenignKind.STALE else f"{self.kind.value}:{self.value:g}"


def assign_roles(n: int, t: int, d: int, q: int) -> dict[ProcessId, Role]:
    """Byzantine first, then deceitful, then benign, honest last."""
    roles = {}
    for pid in range(n):
        if pid < t:
            roles[pid] = Role.BYZANTINE
        elif pid < t + d:
            roles[pid] = Role.DECEITFUL
        elif pid < t + d + q:
            roles[pid] = Role.BENIGN
        else:
            roles[pid] = Role.HONEST
    return roles


def split_partitions(honest: list[ProcessId], a: int) -> list[list[ProcessId]]:
    """a contiguous, near-equal, non-empty groups."""
    a = max(1, min(a, len(honest)))
    return [[int(p) for p in chunk] for chunk in np.array_split(np.array(sorted(honest), dtype=int), a)]


@dataclass
class AdversarySpec:
    roles: dict[ProcessId, Role]
    attack: Attack = Attack.NONE
    partitions: list[list[ProcessId]] = field(default_factory=list)
    benign: BenignBehavior = field(default_factory=BenignBehavior)

    def __post_init__(self):
        self.attack = Attack(self.attack)
        honest = set(self.honest)
        seen: set[ProcessId] = set()
        for group in self.partitions:
            for p in group:
                if p in seen:
                    raise ValueError(f"p{p} appears in two partitions")
                if p not in honest:
                    raise ValueError(f"p{p} in a partition is not honest")
                seen.add(p)
        rest = sorted(honest - seen)
        if not self.partitions:
            self.partitions = [rest]
        elif rest:
            self.partitions[0] = sorted(self.partitions[0] + rest)
        self._side = {p: s for s, group in enumerate(self.partitions) for p in group}

    def check_profile(self, t: int, d: int, q: int):
        counts = {r: sum(1 for v in self.roles.values() if v == r) for r in Role}
        if (counts[Role.BYZANTINE], counts[Role.DECEITFUL], counts[Role.BENIGN]) != (t, d, q):
            raise ValueError("role counts do not match the fault profile")

    # -- views -------------------------------------------------------------------

    def ids(self, role: Role) -> list[ProcessId]:
        return sorted(p for p, r in self.roles.items() if r == role)

    @property
    def honest(self) -> list[ProcessId]:
        return self.ids(Role.HONEST)

    @property
    def coalition(self) -> list[ProcessId]:
        return sorted(p for p, r in self.roles.items() if r in (Role.DECEITFUL, Role.BYZANTINE))

    @property
    def sides(self) -> int:
        if self.attack == Attack.NONE or not self.coalition:
            return 1
        return len(self.partitions)

    def side_of(self, pid: ProcessId) -> int:
        return self._side.get(pid, 0)

    def actors(self) -> list[Actor]:
        out = []
        for pid in sorted(self.roles):
            role = self.roles[pid]
            if role == Role.HONEST:
                out.append((pid, self.side_of(pid)))
            elif role == Role.BENIGN:
                out.append((pid, 0))
            else:
                out.extend((pid, s) for s in range(self.sides))
        return out

    def is_replica(self, actor: Actor) -> bool:
        return self.roles[actor[0]] in (Role.DECEITFUL, Role.BYZANTINE)

    def recipients(self, actor: Actor) -> list[Actor]:
        """Who hears a broadcast by actor."""
        pid, side = actor
        role = self.roles[pid]
        out = []
        for other in self.actors():
            if other == actor or other[0] == pid:
                continue
            orole = self.roles[other[0]]
            if role == Role.HONEST:
                if orole in (Role.DECEITFUL, Role.BYZANTINE):
                    ok = other[1] == side
                else:
                    ok = True
            elif role == Role.BENIGN:
                ok = orole in (Role.HONEST, Role.BENIGN) or other[1] == 0
            else:
                if orole == Role.HONEST:
                    ok = self.side_of(other[0]) == side
                elif orole == Role.BENIGN:
                    ok = side == 0
                else:
                    ok = other[1] == side
            if ok:
                out.append(other)
        return out

    def cross_partition(self, a: Actor, b: Actor) -> bool:
        return (
            self.roles[a[0]] == Role.HONEST and self.roles[b[0]] == Role.HONEST
            and self.side_of(a[0]) != self.side_of(b[0])
        )

    # -- attack inputs -------------------------------------------------------------

    def targets(self) -> list[ProcessId]:
        """Coalition indices the binary-consensus attack flips, one per side."""
        c = self.coalition
        return [c[s % len(c)] for s in range(self.sides)] if c else []

    def replica_inputs(self, actor: Actor, protocol: str, honest_input, source: ProcessId = 0,
                       fork: Optional[Callable] = None):
        """
        (proposal, bit overrides) for one replica. A None proposal means the
        replica withholds its broadcast on this side. fork(value, side) builds
        the side-specific variant of a proposal.
        """
        pid, side = actor
        fork = fork or tag_side
        if self.sides < 2:
            return honest_input, {}
        if protocol == "aabc":
            return side % 2, {}
        if self.attack == Attack.RELIABLE_BROADCAST:
            if protocol == "aarb" and pid != source:
                return honest_input, {}
            return fork(honest_input, side), {}
        if protocol == "aarb":
            return honest_input, {}
        targets = self.targets()
        mine = targets[side]
        overrides = {c: int(c == mine) for c in targets}
        if pid == mine:
            return fork(honest_input, side), overrides
        proposal = None if pid in targets else honest_input
        return proposal, overrides


def tag_side(value, side: int) -> bytes:
    return bytes(value) + b"|side%d" % side


def deceitful_step(spec: AdversarySpec, actor: Actor, msgs: list[SignedMessage],
                   rng: np.random.Generator) -> list[tuple[Actor, SignedMessage]]:
    """Per-recipient sends of one coalition replica."""
    role = spec.roles[actor[0]]
    out = []
    for msg in msgs:
        for to in spec.recipients(actor):
            if role == Role.BYZANTINE:
                roll = rng.random()
                if roll < BYZANTINE_DROP_FRACTION:
                    continue
                if roll < BYZANTINE_DROP_FRACTION + BYZANTINE_GARBLE_FRACTION:
                    out.append((to, garble(msg)))
                    continue
            out.append((to, msg))
    return out


def garble(msg: SignedMessage) -> SignedMessage:
    sig = bytearray(msg.signature or b"\x00")
    sig[0] ^= 0xFF
    return replace(msg, signature=bytes(sig))


def benign_step(spec: AdversarySpec, actor: Actor, msgs: list[SignedMessage], now: float,
                delta: float, rng: np.random.Generator) -> list[tuple[Actor, SignedMessage, float]]:
    """Per-recipient sends of a benign process with the extra delay it adds."""
    b = spec.benign
    if b.kind == BenignKind.CRASH_AT and now >= b.value:
        return []
    lag = STALE_LAG_FACTOR * delta if b.kind == BenignKind.STALE else 0.0
    out = []
    for msg in msgs:
        for to in spec.recipients(actor):
            if b.kind == BenignKind.OMIT_FRACTION and rng.random() < b.value:
                continue
            out.append((to, msg, lag))
    return out


def crashed(spec: AdversarySpec, actor: Actor, now: float) -> bool:
    return (
        spec.roles[actor[0]] == Role.BENIGN
        and spec.benign.kind == BenignKind.CRASH_AT
        and now >= spec.benign.value
    )


def default_partition_count(n_honest: int, branches: Optional[int]) -> int:
    """Split into the most branches the coalition can sustain, at least two."""
    if branches is None:
        return n_honest
    return max(1, min(n_honest, max(2, branches)))
