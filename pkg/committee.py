"""Committee views, the live voting threshold h(d_r) and BDB tolerance predicates."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

from signing import Pki, ProcessId, ProofOfFraud, verify_pof

logger = logging.getLogger(__name__)


class ThresholdError(ValueError):
    pass


@dataclass(frozen=True)
class FaultProfile:
    n: int
    t: int
    d: int
    q: int

    def __post_init__(self):
        if min(self.n, self.t, self.d, self.q) < 0:
            raise ValueError("fault counts must be non-negative")
        if self.t + self.d + self.q > self.n:
            raise ValueError(f"t+d+q={self.t + self.d + self.q} exceeds n={self.n}")

    @property
    def dt(self) -> int:
        return self.d + self.t

    @property
    def honest(self) -> int:
        return self.n - self.t - self.d - self.q


def check_threshold(n: int, h: int):
    if not (2 * h > n and h <= n):
        raise ThresholdError("threshold out of (n/2, n]")


def consensus_tolerated(p: FaultProfile) -> bool:
    return p.n > 3 * p.t + p.d + 2 * p.q


def threshold_tolerated(p: FaultProfile, h: int) -> tuple[bool, bool]:
    """(safety, liveness) of threshold h against profile p."""
    check_threshold(p.n, h)
    return p.dt < 2 * h - p.n, p.q + p.t <= p.n - h


def eventual_consensus_tolerated(p: FaultProfile, h: int) -> bool:
    check_threshold(p.n, h)
    return p.dt < h and p.q + p.t <= p.n - h


def tolerating_thresholds(p: FaultProfile) -> list[int]:
    """Every integer h in (n/2, n] that is both safe and live for p."""
    return [h for h in range(p.n // 2 + 1, p.n + 1) if threshold_tolerated(p, h) == (True, True)]


def membership_safe(p: FaultProfile, h_prime0: int) -> bool:
    """Exclusion consensus stays safe iff h'0 > (d+t+n)/2."""
    return 2 * h_prime0 > p.dt + p.n


def awareness_tolerated(p: FaultProfile, h0: int, h_prime0: int) -> bool:
    return p.dt < h0 + h_prime0 - p.n


def detection_threshold(n: int, h0: int) -> int:
    """f_d = 2h0 - n accused processes trigger a membership change."""
    return 2 * h0 - n


@dataclass(frozen=True)
class Committee:
    """One process's view of the committee for one consensus instance."""
    roster: tuple[ProcessId, ...]
    n0: int
    h0: int
    local_deceitful: frozenset = frozenset()
    pof_keys: frozenset = frozenset()
    local_pofs: tuple[ProofOfFraud, ...] = field(default=(), repr=False)

    @classmethod
    def create(cls, roster: Iterable[ProcessId], h0: int,
               excluded: Iterable[ProcessId] = ()) -> "Committee":
        roster = tuple(roster)
        check_threshold(len(roster), h0)
        return cls(roster=roster, n0=len(roster), h0=h0,
                   local_deceitful=frozenset(p for p in excluded if p in roster))

    @property
    def d_r(self) -> int:
        return len(self.local_deceitful)

    @property
    def h(self) -> int:
        return max(1, self.h0 - self.d_r)

    @property
    def members(self) -> tuple[ProcessId, ...]:
        return tuple(p for p in self.roster if p not in self.local_deceitful)

    @property
    def out_of_model(self) -> bool:
        """The live threshold no longer reaches a majority of the remaining members."""
        return self.h < len(self.members) // 2 + 1

    def is_active(self, pid: ProcessId) -> bool:
        return pid in self.roster and pid not in self.local_deceitful

    def count(self, signers: Iterable[ProcessId]) -> int:
        """Distinct non-excluded signers."""
        return len({s for s in signers if self.is_active(s)})

    def coordinator(self, round_: int) -> ProcessId:
        return self.roster[(round_ - 1) % self.n0]


def update_committee(c: Committee, new_pofs: Iterable[ProofOfFraud],
                     pki: Optional[Pki] = None
                     ) -> tuple[Committee, set[ProcessId], list[ProofOfFraud]]:
    """
    Store fresh PoFs and exclude the processes they accuse.
    Returns the new view, the ids excluded by this call and the PoFs worth
    broadcasting. Invalid PoFs are dropped, the rest are still processed.
    """
    keys = set(c.pof_keys)
    excluded = set(c.local_deceitful)
    fresh: list[ProofOfFraud] = []
    newly: set[ProcessId] = set()
    for pof in new_pofs:
        if pki is not None and not verify_pof(pof, pki):
            logger.debug("rejected invalid PoF against p%s", getattr(pof, "accused", "?"))
            continue
        if pof.key in keys:
            continue
        keys.add(pof.key)
        fresh.append(pof)
        if pof.accused in c.roster and pof.accused not in excluded:
            excluded.add(pof.accused)
            newly.add(pof.accused)
    if not fresh:
        return c, newly, fresh
    updated = replace(
        c,
        local_deceitful=frozenset(excluded),
        pof_keys=frozenset(keys),
        local_pofs=c.local_pofs + tuple(fresh),
    )
    if newly:
        logger.debug("excluded %s, h now %d", sorted(newly), updated.h)
        if updated.out_of_model:
            logger.warning("threshold %d fell below majority of %d members: run is out of model",
                           updated.h, len(updated.members))
    return updated, newly, fresh
