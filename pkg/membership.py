"""
Membership change: accumulate proofs of fraud until f_d = 2h0 - n processes
are accused, exclude them through a consensus on PoF sets, then refill the
committee from the candidate pool through a second consensus.

Both consensus runs are ordinary Basilic instances over the old roster with
the accused already excluded, so their threshold starts at h'0 - f_d.
"""
from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Optional

import numpy as np

from basilic import verify_bundle
from committee import Committee, detection_threshold
from signing import InstanceId, Pki, ProcessId, ProofOfFraud, SignedMessage, verify_pof
from utils import canonical_json

logger = logging.getLogger(__name__)

EXCLUSION_TRACK = 1
INCLUSION_TRACK = 2


class PoolExhausted(RuntimeError):
    pass


class CatchUpError(RuntimeError):
    def __init__(self, height: int, message: str):
        super().__init__(f"height {height}: {message}")
        self.height = height


class MembershipAction(str, Enum):
    NONE = "none"
    START_EXCLUSION = "start-exclusion"
    UPDATE_WORKING = "update-working-committee"


# ---------------------------------------------------------------------------
# Candidate pool
# ---------------------------------------------------------------------------

@dataclass
class PoolCandidate:
    id: ProcessId
    honest: bool                 # ground truth, only the simulator reads it
    proposed_before: bool = False


class Pool:
    def __init__(self, candidates: list[PoolCandidate]):
        self.candidates = list(candidates)

    @classmethod
    def generate(cls, first_id: int, size: int, honest_fraction: float,
                 rng: np.random.Generator) -> "Pool":
        """size candidates, round(size * honest_fraction) of them honest, in shuffled order."""
        honest = int(round(size * honest_fraction))
        tags = np.array([True] * honest + [False] * (size - honest))
        rng.shuffle(tags)
        return cls([PoolCandidate(first_id + i, bool(tag)) for i, tag in enumerate(tags)])

    def __len__(self):
        return len(self.candidates)

    def available(self, honest: Optional[bool] = None) -> list[PoolCandidate]:
        return [c for c in self.candidates
                if not c.proposed_before and (honest is None or c.honest == honest)]

    def draw(self, k: int, honest: bool) -> list[ProcessId]:
        """
        First k unproposed candidates of the requested kind. Honest processes
        all compute the same list; the coalition prefers its own candidates
        and falls back on honest ones.
        """
        picked = self.available(honest)[:k]
        if len(picked) < k and not honest:
            picked += self.available(True)[:k - len(picked)]
        if len(picked) < k:
            raise PoolExhausted(f"pool exhausted: need {k}, {len(picked)} left")
        return [c.id for c in picked]

    def mark(self, ids: Iterable[ProcessId]):
        ids = set(ids)
        for c in self.candidates:
            if c.id in ids:
                c.proposed_before = True

    def is_honest(self, pid: ProcessId) -> Optional[bool]:
        for c in self.candidates:
            if c.id == pid:
                return c.honest
        return None


# ---------------------------------------------------------------------------
# Proposal payloads
# ---------------------------------------------------------------------------

def pof_ref(pof: ProofOfFraud) -> tuple:
    return (pof.accused, pof.first.digest.hex(), pof.second.digest.hex())


def encode_pof_set(pofs: Iterable[ProofOfFraud]) -> bytes:
    refs = sorted({pof_ref(p) for p in pofs})
    return canonical_json({"exclude": [list(r) for r in refs]})


def decode_pof_set(payload: bytes) -> Optional[list[tuple]]:
    try:
        raw = json.loads(payload)
        return [(int(a), str(d1), str(d2)) for a, d1, d2 in raw["exclude"]]
    except (ValueError, KeyError, TypeError):
        return None


def encode_candidates(ids: Iterable[ProcessId]) -> bytes:
    return canonical_json({"include": [int(p) for p in ids]})


def decode_candidates(payload: bytes) -> Optional[list[ProcessId]]:
    try:
        raw = json.loads(payload)
        return [int(p) for p in raw["include"]]
    except (ValueError, KeyError, TypeError):
        return None


def exclusion_validity(roster: tuple) -> Callable[[bytes], bool]:
    members = set(roster)

    def valid(payload: bytes) -> bool:
        refs = decode_pof_set(payload)
        return refs is not None and all(a in members for a, _, _ in refs)
    return valid


def inclusion_validity(roster: tuple, pool: Pool, k: int) -> Callable[[bytes], bool]:
    members = set(roster)
    known = {c.id for c in pool.candidates}

    def valid(payload: bytes) -> bool:
        ids = decode_candidates(payload)
        return (
            ids is not None and len(ids) == k and len(set(ids)) == k
            and all(p in known and p not in members for p in ids)
        )
    return valid


# ---------------------------------------------------------------------------
# Per-process state
# ---------------------------------------------------------------------------

@dataclass
class MembershipState:
    roster: tuple                          # durable committee C
    h0: int
    h0_membership: int
    pofs: dict = field(default_factory=dict)           # PoF key -> ProofOfFraud
    working: Optional[tuple] = None        # C' while an exclusion is running
    certificates: list = field(default_factory=list)   # (message, root) of the exclusion run
    excluding: bool = False
    stopped: bool = False                  # pending chain instance paused

    @property
    def f_d(self) -> int:
        return detection_threshold(len(self.roster), self.h0)

    def accused(self) -> set[ProcessId]:
        return {p.accused for p in self.pofs.values() if p.accused in self.roster}

    def registry(self) -> dict:
        return {pof_ref(p): p for p in self.pofs.values()}

    def working_committee(self) -> Committee:
        """Exclusion/inclusion view: old roster, accused excluded, threshold h'0 - d'_r."""
        return Committee.create(self.roster, self.h0_membership, excluded=self.accused())

    def exclusion_threshold(self) -> int:
        return self.working_committee().h

    def on_pofs(self, pofs: Iterable[ProofOfFraud], pki: Optional[Pki] = None) -> MembershipAction:
        fresh = 0
        for pof in pofs:
            if pki is not None and not verify_pof(pof, pki):
                logger.debug("membership: rejected invalid PoF against p%s", getattr(pof, "accused", "?"))
                continue
            if pof.key in self.pofs:
                continue
            self.pofs[pof.key] = pof
            fresh += 1
        accused = self.accused()
        if self.excluding:
            if not fresh:
                return MembershipAction.NONE
            self.working = tuple(p for p in self.roster if p not in accused)
            return MembershipAction.UPDATE_WORKING
        if len(accused) < self.f_d:
            return MembershipAction.NONE
        self.excluding = True
        self.stopped = True
        self.working = tuple(p for p in self.roster if p not in accused)
        logger.info("membership: %d accused (f_d=%d), starting exclusion over %d members",
                    len(accused), self.f_d, len(self.working))
        return MembershipAction.START_EXCLUSION

    def recheck(self) -> list:
        """Outcomes of the stored exclusion certificates that still meet the current threshold."""
        h = self.exclusion_threshold()
        checked = (verify_bundle(m, root, self.roster, h) for m, root in self.certificates)
        return [outcome for outcome in checked if outcome is not None]


def exclusion_decide(state: MembershipState, decided_values: Iterable[bytes],
                     punish: Optional[Callable[[set], None]] = None) -> set[ProcessId]:
    """
    Union of the accused of every decided PoF-set proposal. Excludes them
    durably and hands them to the punishment hook.
    """
    excluded: set[ProcessId] = set()
    for value in decided_values:
        refs = decode_pof_set(value)
        if refs is None:
            continue
        excluded.update(a for a, _, _ in refs if a in state.roster)
    state.roster = tuple(p for p in state.roster if p not in excluded)
    state.excluding = False
    state.working = None
    if excluded and punish is not None:
        punish(excluded)
    logger.info("membership: excluded %s", sorted(excluded))
    return excluded


def pof_trail(decided_values: Iterable[bytes], registry: dict, pki: Optional[Pki] = None) -> dict:
    """accused id -> verifiable PoFs named by the decided exclusion set."""
    trail: dict[ProcessId, list[ProofOfFraud]] = {}
    for value in decided_values:
        for ref in decode_pof_set(value) or []:
            pof = registry.get(ref)
            if pof is None or (pki is not None and not verify_pof(pof, pki)):
                continue
            trail.setdefault(ref[0], []).append(pof)
    return trail


def choose(proposals: list[tuple[ProcessId, list[ProcessId]]], k: int) -> list[ProcessId]:
    """Round-robin over proposals sorted by proposer, skipping repeats, until k ids."""
    ordered = [ids for _, ids in sorted(proposals, key=lambda p: p[0])]
    chosen: list[ProcessId] = []
    depth = max((len(ids) for ids in ordered), default=0)
    for i in range(depth):
        for ids in ordered:
            if i < len(ids) and ids[i] not in chosen:
                chosen.append(ids[i])
                if len(chosen) == k:
                    return chosen
    if len(chosen) < k:
        raise PoolExhausted(f"pool exhausted: decided proposals hold {len(chosen)} of {k} candidates")
    return chosen


def inclusion_decide(state: MembershipState, decided: list[tuple[ProcessId, bytes]],
                     excluded: set[ProcessId]) -> tuple:
    """New durable committee: survivors plus |excluded| chosen candidates."""
    proposals = []
    for proposer, value in decided:
        ids = decode_candidates(value)
        if ids is not None:
            proposals.append((proposer, [p for p in ids if p not in state.roster]))
    chosen = choose(proposals, len(excluded))
    state.roster = tuple(sorted(set(state.roster) | set(chosen)))
    state.pofs = {k: p for k, p in state.pofs.items() if p.accused in state.roster}
    state.stopped = False
    logger.info("membership: included %s", chosen)
    return state.roster


# ---------------------------------------------------------------------------
# Catch-up of a newly included process
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChainEntry:
    height: int
    root: InstanceId
    roster: tuple
    h: int
    bundle: SignedMessage


def catch_up(chain: list[ChainEntry], pki: Pki, state) -> tuple:
    """
    Verify the certificate of every block, not its transactions, then adopt
    state. Returns (copied state, certificates verified).
    """
    checked = 0
    for entry in chain:
        ok = pki.verify_all(entry.bundle) and verify_bundle(
            entry.bundle, entry.root, entry.roster, entry.h) is not None
        if not ok:
            raise CatchUpError(entry.height, "invalid block certificate")
        checked += 1
    return copy.deepcopy(state), checked
