# zlb_runner.py
"""
Multi-instance ZLB driver.

Each chain instance is one Basilic run over the current committee. After it,
honest processes apply their decided superblock, merge every conflicting
block they learnt of, and feed the PoFs they hold to their membership state.
Once f_d processes are accused, an exclusion consensus and an inclusion
consensus run over the old roster and the committee is replaced.
"""
from __future__ import annotations

import copy
import hashlib
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from aabc import TimeoutPolicy
from adversary import (
    AdversarySpec,
    Attack,
    BenignBehavior,
    BenignKind,
    Role,
    assign_roles,
    default_partition_count,
    split_partitions,
    tag_side,
)
from analysis import AnalysisError, max_branches
from basilic import DecisionMode, Outcome, split_superblock
from committee import Committee, FaultProfile, awareness_tolerated, membership_safe, threshold_tolerated
from config import GENESIS_COINS
from ledger import Block, DepositPolicy, LedgerError, LedgerState, TxFactory, decode_batch, encode_batch
from membership import (
    EXCLUSION_TRACK,
    INCLUSION_TRACK,
    ChainEntry,
    MembershipAction,
    MembershipState,
    Pool,
    catch_up,
    encode_candidates,
    encode_pof_set,
    exclusion_decide,
    exclusion_validity,
    inclusion_decide,
    inclusion_validity,
    pof_trail,
)
from signing import InstanceId, MessageStore, Pki, ProcessId, make_scheme
from simnet import RunRecord, SimResult, Simulation, out_of_model_reason
from utils import as_fraction

logger = logging.getLogger(__name__)

MAX_ATTEMPTS = 3


@dataclass
class InstanceReport:
    index: int
    attempt: int
    roster: tuple
    branches: int
    decided: int
    honest: int
    safe: bool
    end_ms: float
    confirmed: int = 0


@dataclass
class ZlbState:
    roster: tuple
    roles: dict                                   # ground truth over committee and pool
    ledgers: dict = field(default_factory=dict)   # honest pid -> LedgerState
    members: dict = field(default_factory=dict)   # honest pid -> MembershipState
    stores: dict = field(default_factory=dict)
    chain: list = field(default_factory=list)     # ChainEntry of the reference process
    clock: float = 0.0
    messages: int = 0
    messages_post_gst: int = 0
    intra: list = field(default_factory=list)
    cross: list = field(default_factory=list)
    horizon_hit: bool = False
    excluded: set = field(default_factory=set)
    ratio: list = field(default_factory=list)
    detect_fd_ms: Optional[float] = None
    changes: int = 0
    exclusion_ms: float = 0.0
    inclusion_ms: float = 0.0
    reports: list = field(default_factory=list)
    problems: list = field(default_factory=list)
    out_of_model: list = field(default_factory=list)
    trail: dict = field(default_factory=dict)       # excluded id -> PoFs backing it
    working_updates: int = 0
    rechecked: int = 0

    def honest(self) -> list[ProcessId]:
        return [p for p in self.roster if self.roles[p] == Role.HONEST]

    def coalition(self) -> list[ProcessId]:
        return [p for p in self.roster if self.roles[p] in (Role.DECEITFUL, Role.BYZANTINE)]

    def profile(self) -> FaultProfile:
        roles = [self.roles[p] for p in self.roster]
        return FaultProfile(n=len(roles), t=roles.count(Role.BYZANTINE), d=roles.count(Role.DECEITFUL),
                            q=roles.count(Role.BENIGN))

    def flag(self, reason: str):
        if reason not in self.out_of_model:
            logger.warning("out of model: %s", reason)
            self.out_of_model.append(reason)

    def deceitful_ratio(self) -> float:
        return len(self.coalition()) / len(self.roster)

    def reference(self) -> LedgerState:
        return self.ledgers[min(self.ledgers)]


class ZlbRunner:
    def __init__(self, scenario, seed: int):
        self.sc = scenario
        self.seed = seed
        n = scenario.n
        rng = np.random.default_rng([seed, 7])
        self.rng_tx = np.random.default_rng([seed, 8])
        roles = dict(assign_roles(n, scenario.t, scenario.d, scenario.q))
        self.pool = Pool.generate(n, scenario.pool_size, scenario.pool.honest_fraction, rng)
        for c in self.pool.candidates:
            roles[c.id] = Role.HONEST if c.honest else Role.DECEITFUL
        ids = sorted(roles)
        scheme = make_scheme(scenario.signature)
        self.pki, self.keys = Pki.generate(scheme, ids, seed)
        # account keys are independent of process keys
        self.accounts_pki, self.account_keys = Pki.generate(make_scheme(scenario.signature), ids, -seed - 1)
        self.policy = DepositPolicy(gain_cap=scenario.deposit.gain_cap, b=scenario.deposit.b,
                                    w=scenario.deposit.w, n=n)
        genesis = LedgerState.genesis(ids, GENESIS_COINS)
        self.factory = TxFactory(genesis, self.accounts_pki, self.account_keys, self.rng_tx)
        self.timeouts = TimeoutPolicy(scenario.delta_ms, scenario.timeouts)
        self.state = ZlbState(roster=tuple(range(n)), roles=roles)
        for p in self.state.honest():
            self.state.ledgers[p] = copy.deepcopy(genesis)
            self.state.members[p] = MembershipState(self.state.roster, scenario.h0, scenario.h0_membership)
            self.state.stores[p] = MessageStore()
        self.state.ratio.append(self.state.deceitful_ratio())
        self._stream = 0

    # -- plumbing ------------------------------------------------------------------

    def _spec(self, roster: tuple, attack: Attack, crashed: frozenset = frozenset()) -> AdversarySpec:
        st = self.state
        roles = {p: (Role.BENIGN if p in crashed else st.roles[p]) for p in roster}
        benign = self.sc.benign if not crashed else BenignBehavior(BenignKind.CRASH_AT, 0.0)
        coalition = [p for p in roster if roles[p] in (Role.DECEITFUL, Role.BYZANTINE)]
        honest = [p for p in roster if roles[p] == Role.HONEST]
        partitions = []
        if attack != Attack.NONE and coalition and honest:
            if self.sc.partitions is not None:
                partitions = [[p for p in g if p in honest] for g in self.sc.partitions]
                partitions = [g for g in partitions if g]
            else:
                count = self.sc.partition_count
                if count is None:
                    try:
                        branches = max_branches(len(roster), self.sc.h0, len(coalition))
                    except AnalysisError:
                        branches = None
                    count = default_partition_count(len(honest), branches)
                partitions = split_partitions(honest, count)
        return AdversarySpec(roles=roles, attack=attack, partitions=partitions, benign=benign)

    def _simulate(self, spec: AdversarySpec, roster: tuple, h0: int, root: InstanceId,
                  inputs: dict, committees: dict, validity, fork=None, alpha=None,
                  prepare: Optional[Callable[[dict], None]] = None) -> SimResult:
        st = self.state
        faulty = sum(1 for p in roster if spec.roles[p] in (Role.BENIGN, Role.BYZANTINE))
        sim = Simulation(
            spec=spec, roster=roster, h0=h0, delays=self.sc.delay, timeouts=self.timeouts,
            gst=max(0.0, self.sc.gst_ms - st.clock), relay_base=len(roster) - faulty,
            pki=self.pki, keys=self.keys, seed=self.seed, protocol="basilic", mode=self.sc.mode,
            root=root, committees=committees, stores=st.stores, validity=validity,
            horizon=self.sc.horizon_ms, stream=self._stream, fork=fork, alpha=alpha,
        )
        self._stream += 1
        if prepare is not None:
            prepare(sim.result.honest_nodes())
        res = sim.run(inputs)
        st.messages += res.messages
        st.messages_post_gst += res.messages_post_gst
        st.intra.extend(res.intra)
        st.cross.extend(res.cross)
        st.horizon_hit |= res.horizon_hit
        return res

    # -- chain instance --------------------------------------------------------------

    def _inputs(self, spec: AdversarySpec) -> tuple[dict, Callable]:
        roster = tuple(sorted(spec.roles))
        inputs, variants = {}, {}
        if spec.sides > 1:
            for pid in spec.coalition:
                recipients = [spec.partitions[s][0] for s in range(spec.sides)]
                txs = self.factory.double_spend(pid, recipients)
                if txs:
                    forks = [encode_batch([tx]) for tx in txs]
                    inputs[pid] = forks[0]
                    variants[forks[0]] = forks
        for pid in roster:
            if pid not in inputs:
                inputs[pid] = encode_batch(self.factory.make(self.sc.txs_per_batch))

        def fork(value, side: int) -> bytes:
            forks = variants.get(bytes(value))
            return forks[side % len(forks)] if forks else tag_side(value, side)
        return inputs, fork

    def _chain_instance(self, index: int, attempt: int) -> bool:
        """Run one instance; False if some honest process did not decide."""
        st = self.state
        sc = self.sc
        attack = Attack(sc.attack) if st.coalition() else Attack.NONE
        spec = self._spec(st.roster, attack)
        inputs, fork = self._inputs(spec)
        committees = {p: Committee.create(st.roster, sc.h0, excluded=st.members[p].accused())
                      for p in st.honest()}
        root = InstanceId(index, attempt=attempt)
        res = self._simulate(spec, st.roster, sc.h0, root, inputs, committees,
                             self.policy.block_valid, fork, alpha=sc.alpha)
        nodes = res.honest_nodes()

        outcomes = {}
        for node in nodes.values():
            if isinstance(node.result, Outcome):
                outcomes[node.result.encode()] = node.result
        known = dict(outcomes)
        for node in nodes.values():
            if node.ec is None:
                continue
            for other in node.ec.pending:
                known.setdefault(other.encode(), other)
            for enc in node.ec.treated:
                if enc not in known:
                    decoded = Outcome.decode(enc, st.roster)
                    if decoded is not None:
                        known[enc] = decoded
        decided = [p for p, node in nodes.items() if node.result is not None]
        profile = st.profile()
        safe = threshold_tolerated(profile, sc.h0)[0]
        reason = out_of_model_reason(profile, sc.h0)
        if reason != "-":
            st.flag(f"instance {index}: {reason}")
        confirmed = sum(1 for node in nodes.values() if node.confirmed_at is not None)
        report = InstanceReport(index, attempt, st.roster, len(outcomes), len(decided), len(nodes),
                                safe, st.clock + res.end_time, confirmed)
        st.reports.append(report)
        if safe and len(outcomes) > 1:
            st.problems.append(f"instance {index}: agreement violated")
        if len(outcomes) > 1 and confirmed and profile.dt <= as_fraction(sc.alpha) * profile.n:
            st.problems.append(f"instance {index}: forked decision alpha-confirmed at {confirmed} processes")

        self._apply_blocks(index, nodes, known)
        if decided:
            ref = nodes[min(decided)]
            st.chain.append(ChainEntry(height=index, root=root, roster=st.roster,
                                       h=ref.committee.h, bundle=ref.bundle))
        self.factory.sync(st.reference())
        self._track_detection(nodes)
        st.clock += res.end_time
        return len(decided) == len(nodes)

    def _apply_blocks(self, index: int, nodes: dict, known: dict):
        blocks = []
        for enc in sorted(known):
            outcome = known[enc]
            txs = []
            values = split_superblock(outcome.decided) if outcome.mode == DecisionMode.SUPERBLOCK else [outcome.decided]
            for value in values:
                try:
                    txs.extend(decode_batch(value))
                except LedgerError:
                    logger.debug("instance %d: skipped an undecodable batch", index)
            blocks.append((enc, Block(index, tuple(txs), hashlib.sha256(enc).hexdigest())))
        for pid, ledger in self.state.ledgers.items():
            node = nodes.get(pid)
            own = node.result.encode() if node is not None and isinstance(node.result, Outcome) else None
            ordered = sorted(blocks, key=lambda b: (b[0] != own, b[0]))
            for _, block in ordered:
                ledger.merge_block(block)

    def _track_detection(self, nodes: dict):
        st = self.state
        union = []
        for node in nodes.values():
            union.extend(node.pofs())
        reached = {p: self._reached_fd(st.members[p], node) for p, node in nodes.items()}
        if st.detect_fd_ms is None and reached and all(t is not None for t in reached.values()):
            st.detect_fd_ms = st.clock + max(reached.values())
        # POF_LIST gossip leaves every honest process with the union
        for p, node in nodes.items():
            if st.members[p].on_pofs(union, self.pki) != MembershipAction.START_EXCLUSION:
                continue
            # the instance is paused only where f_d was reached before the local decision
            when = reached[p]
            st.members[p].stopped = node.decided_at is None or (when is not None and when < node.decided_at)

    @staticmethod
    def _reached_fd(members: MembershipState, node) -> Optional[float]:
        """Instance-relative time at which node held f_d accused, None if it never did."""
        count = len(members.accused())
        if count >= members.f_d:
            return 0.0
        for t, newly in node.exclusion_log:
            count += len(newly)
            if count >= members.f_d:
                return t
        return None

    # -- membership change -------------------------------------------------------------

    def _membership_change(self, index: int):
        st = self.state
        sc = self.sc
        old = st.roster
        honest = st.honest()
        accused = frozenset().union(*(st.members[p].accused() for p in honest))
        st.changes += 1
        profile = st.profile()
        safe = membership_safe(profile, sc.h0_membership)
        if not safe:
            st.flag(f"change {st.changes}: d+t={profile.dt} >= 2h'0-n={2 * sc.h0_membership - profile.n}")
        if not awareness_tolerated(profile, sc.h0, sc.h0_membership):
            st.flag(f"change {st.changes}: d+t={profile.dt} >= h0+h'0-n={sc.h0 + sc.h0_membership - profile.n}")

        # coalition members nobody has accused yet keep attacking
        attack = Attack(sc.attack) if any(p not in accused for p in st.coalition()) else Attack.NONE
        spec = self._spec(old, attack, crashed=accused)
        inputs = {p: (encode_pof_set(st.members[p].pofs.values()) if p in st.members else encode_pof_set([]))
                  for p in old if p not in accused}
        committees = {p: st.members[p].working_committee() for p in honest}
        root = InstanceId(index, track=EXCLUSION_TRACK, attempt=st.changes)
        res = self._simulate(spec, old, sc.h0_membership, root, inputs, committees, exclusion_validity(old),
                             prepare=self._feed_pofs)
        st.clock += res.end_time
        st.exclusion_ms += res.end_time
        nodes = res.honest_nodes()
        decided = {p: node.result for p, node in nodes.items() if isinstance(node.result, Outcome)}
        if len({o.encode() for o in decided.values()}) > 1:
            if safe:
                st.problems.append(f"change {st.changes}: exclusion disagreement")
            else:
                logger.warning("change %d: exclusion disagreement outside the model", st.changes)
        if not decided:
            raise RuntimeError(f"change {st.changes}: exclusion consensus did not terminate")
        ref = min(decided)
        excluded: set = set()
        for p in honest:
            outcome = self._rechecked(p, nodes.get(p), root, nodes[ref].bundle, decided.get(p) or decided[ref])
            values = outcome.value_set()
            for pid, pofs in pof_trail(values, st.members[p].registry(), self.pki).items():
                st.trail.setdefault(pid, len(pofs))
            excluded = exclusion_decide(st.members[p], values, punish=self._punisher(p))
        unproven = sorted(excluded - set(st.trail))
        if unproven:
            st.problems.append(f"change {st.changes}: {unproven} excluded without a verifiable PoF")
        st.excluded |= excluded

        k = len(excluded)
        survivors = tuple(p for p in old if p not in excluded)
        proposals = {}
        for p in survivors:
            if st.roles[p] == Role.BENIGN:
                continue
            proposals[p] = self.pool.draw(k, honest=st.roles[p] == Role.HONEST)
        for ids in proposals.values():
            self.pool.mark(ids)
        spec = self._spec(old, Attack.NONE, crashed=frozenset(excluded))
        inputs = {p: encode_candidates(ids) for p, ids in proposals.items()}
        committees = {p: Committee.create(old, sc.h0_membership, excluded=excluded) for p in honest}
        root = InstanceId(index, track=INCLUSION_TRACK, attempt=st.changes)
        res = self._simulate(spec, old, sc.h0_membership, root, inputs, committees,
                             inclusion_validity(old, self.pool, k))
        st.clock += res.end_time
        st.inclusion_ms += res.end_time
        nodes = res.honest_nodes()
        decided = {p: node.result for p, node in nodes.items() if isinstance(node.result, Outcome)}
        if not decided:
            raise RuntimeError(f"change {st.changes}: inclusion consensus did not terminate")
        reference = decided[min(decided)]
        new_roster = survivors
        for p in honest:
            values = list((decided.get(p) or reference).values)
            new_roster = inclusion_decide(st.members[p], values, excluded)
        self._admit(new_roster)
        st.ratio.append(st.deceitful_ratio())
        logger.info("membership change %d: excluded %s, committee now %s",
                    st.changes, sorted(excluded), list(new_roster))

    def _feed_pofs(self, nodes: dict):
        """PoFs found while the exclusion consensus runs reach each membership state."""
        st = self.state

        def on_pofs(node, fresh: list, now: float):
            members = st.members[node.pid]
            if members.on_pofs(fresh, self.pki) == MembershipAction.UPDATE_WORKING:
                st.working_updates += 1
                logger.info("p%d: fresh PoF at %.1f ms, working committee now %s",
                            node.pid, now, list(members.working))
        for node in nodes.values():
            node.on_pofs = on_pofs

    def _rechecked(self, pid: ProcessId, node, root: InstanceId, ref_bundle, fallback: Outcome) -> Outcome:
        """
        Exclusion decision pid adopts: one carried by a certificate it holds
        that still verifies under the threshold of its shrunk working committee.
        """
        members = self.state.members[pid]
        held = [] if node is None else [node.bundle, *node.received_bundles.values()]
        held.append(ref_bundle)
        members.certificates = [(m, root) for m in held if m is not None]
        valid = members.recheck()
        self.state.rechecked += len(valid)
        own = node.result if node is not None and isinstance(node.result, Outcome) else None
        for outcome in valid:
            if own is None or outcome.encode() == own.encode():
                return outcome
        logger.warning("p%d: no exclusion certificate meets threshold %d, adopting the reference decision",
                       pid, members.exclusion_threshold())
        return fallback

    def _punisher(self, pid: ProcessId):
        ledger = self.state.ledgers[pid]
        per_process = self.policy.per_process

        def punish(excluded: set):
            for p in sorted(excluded):
                ledger.slash_locked(per_process)
                ledger.punish_account(p)
        return punish

    def _admit(self, new_roster: tuple):
        st = self.state
        reference = st.reference()
        for p in new_roster:
            if p in st.roster or st.roles[p] != Role.HONEST:
                continue
            ledger, _ = catch_up(st.chain, self.pki, reference)
            st.ledgers[p] = ledger
            st.stores[p] = MessageStore()
        st.roster = tuple(new_roster)
        for p in st.honest():
            if p not in st.members or st.members[p].roster != st.roster:
                fresh = MembershipState(st.roster, self.sc.h0, self.sc.h0_membership)
                if p in st.members:
                    fresh.pofs = st.members[p].pofs
                st.members[p] = fresh

    # -- run ---------------------------------------------------------------------------

    def run(self) -> RunRecord:
        st = self.state
        index, attempt = 0, 0
        last_change = -1
        while index < self.sc.instances:
            complete = self._chain_instance(index, attempt)
            honest = st.honest()
            if any(st.members[p].excluding for p in honest):
                paused = not complete or any(st.members[p].stopped for p in honest)
                self._membership_change(index)
                last_change = index
                if paused and attempt + 1 < MAX_ATTEMPTS:
                    # the paused instance restarts from scratch with the new committee
                    attempt += 1
                    continue
            index, attempt = index + 1, 0
        return self._record(last_change)

    def _record(self, last_change: int) -> RunRecord:
        st = self.state
        sc = self.sc
        last = st.reports[-1]
        after = [r for r in st.reports if r.index > last_change]
        if any(r.branches > 1 for r in after) and last_change >= 0:
            st.problems.append("no convergence after the last membership change")
        if any(b > a for a, b in zip(st.ratio, st.ratio[1:])):
            st.problems.append("deceitful ratio increased")
        held = {p: st.excluded | st.members[p].accused() for p in st.honest()}
        union = sorted(set().union(*held.values())) if held else []
        coalition = {p for p, r in st.roles.items() if r in (Role.DECEITFUL, Role.BYZANTINE)}
        framed = sorted(set(union) - coalition)
        if framed:
            st.problems.append(f"processes outside the coalition accused: {framed}")
        ledger = st.reference()
        record = RunRecord(
            scenario=sc.name, seed=self.seed, protocol="zlb",
            n=sc.n, t=sc.t, d=sc.d, q=sc.q, h0=sc.h0,
            attack=Attack(sc.attack).value, timeouts=sc.timeouts,
            decided=last.decided, honest=last.honest,
            branches=max(r.branches for r in st.reports),
            accused=union, min_accused=min((len(v) for v in held.values()), default=0),
            exclusions=len(st.excluded),
            messages=st.messages, messages_post_gst=st.messages_post_gst,
            last_decision_ms=last.end_ms,
            delay_ratio=(float(np.mean(st.intra)) / float(np.mean(st.cross))) if st.intra and st.cross else None,
            horizon_hit=st.horizon_hit,
            decisions={r.index: r.branches for r in st.reports},
            accused_by={p: sorted(v) for p, v in held.items()},
            detect_fd_ms=st.detect_fd_ms,
            membership_changes=st.changes,
            deceitful_ratio=list(st.ratio),
            deposit_flux=ledger.deposit,
            chain=ledger.dump_chain(),
            confirmed=last.confirmed,
            out_of_model="; ".join(st.out_of_model) or "-",
            phases={
                "last_change": last_change,
                "exclusion_ms": round(st.exclusion_ms, 3),
                "inclusion_ms": round(st.inclusion_ms, 3),
                "negative_deposit": ledger.negative,
                "slashed": round(ledger.slashed, 3),
                "funded": round(ledger.funded, 3),
                "refunded": round(ledger.refunded, 3),
                "confirmed_instances": sum(1 for r in st.reports if r.honest and r.confirmed == r.honest),
                "confirmed_forks": sum(1 for r in st.reports if r.branches > 1 and r.confirmed),
                "working_updates": st.working_updates,
                "rechecked": st.rechecked,
                "pof_trail": {str(p): k for p, k in sorted(st.trail.items())},
                "restarts": sum(1 for r in st.reports if r.attempt > 0),
            },
        )
        if st.problems:
            record.status = "violation"
            record.note = "; ".join(st.problems)
        return record


def run(scenario, seed: int) -> RunRecord:
    """Simulate a ZLB chain of `scenario.instances` instances for one seed."""
    return ZlbRunner(scenario, seed).run()
