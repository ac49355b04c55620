"""
Per-process actor.

A Node owns the committee view, the message store and one BasilicInstance.
It signs what the protocol emits, verifies what arrives (outer and nested
signatures), turns conflicting pairs into proofs of fraud, excludes the
accused and gossips fresh proofs, and after a decision broadcasts its bundle
and tracks confirmations and disagreements.

Nodes never talk to the network directly: everything to broadcast lands in
`outbox` and the simulator decides who gets it and when.
"""
from __future__ import annotations

import logging
from collections import deque
from typing import Callable, Optional

from aabc import TimeoutPolicy
from basilic import (
    BasilicInstance,
    ConfirmStatus,
    DecisionMode,
    EcSequence,
    Outcome,
    confirm,
    verify_bundle,
)
from committee import Committee, update_committee
from signing import (
    CONFLICT_KINDS,
    Certificate,
    InstanceId,
    KeyPair,
    Kind,
    MessageStore,
    Phase,
    Pki,
    ProcessId,
    ProofOfFraud,
    SignedMessage,
    check_conflicts,
    flatten,
    sign,
)

logger = logging.getLogger(__name__)


class Node:
    def __init__(self, pid: ProcessId, key: KeyPair, pki: Pki, committee: Committee,
                 timeouts: TimeoutPolicy, relay_base: int, blind: frozenset = frozenset(),
                 store: Optional[MessageStore] = None):
        self.pid = pid
        self.key = key
        self.pki = pki
        self.committee = committee
        self.timeouts = timeouts
        self.relay_base = relay_base
        # conflicts signed by these ids are ignored (adversary replicas sharing a key)
        self.blind = frozenset(blind)
        self.store = store if store is not None else MessageStore()
        self.instance: Optional[BasilicInstance] = None
        self.outbox: list[SignedMessage] = []
        self.exclusion_log: list[tuple[float, list[ProcessId]]] = []
        self.rejected = 0
        self.bad_bundles = 0
        self.sent_units = 0
        self.decided_at: Optional[float] = None
        self.confirmations: set[ProcessId] = set()
        self.conflicting_bundles: set[ProcessId] = set()
        self.received_bundles: dict[ProcessId, SignedMessage] = {}
        # confirmation ratio to track; confirmed_at is set once the decision is alpha-confirmed
        self.alpha = None
        self.confirmed_at: Optional[float] = None
        self.ec: Optional[EcSequence] = None
        self.ec_deadline: Optional[float] = None
        self.bundle: Optional[SignedMessage] = None
        self.on_decision: Optional[Callable[["Node", object, float], None]] = None
        self.on_pofs: Optional[Callable[["Node", list, float], None]] = None
        self._local: deque = deque()
        self._handled: set[bytes] = set()
        self._known: set[bytes] = set()
        self._early_bundles: list[SignedMessage] = []
        self._relayed_bundles: set[bytes] = set()

    # -- Host ------------------------------------------------------------------

    def emit(self, kind: Kind, instance: InstanceId, round_: int, phase: Phase,
             payload: bytes, certificate: Optional[Certificate] = None) -> SignedMessage:
        msg = sign(self.pki.scheme, self.key, SignedMessage(
            kind=kind, instance=instance, round=round_, phase=phase,
            payload=payload, signer=self.pid, certificate=certificate,
        ))
        self.outbox.append(msg)
        self._local.append((msg, True))
        return msg

    def rebroadcast(self, msgs: list[SignedMessage]) -> None:
        self.outbox.extend(msgs)

    # -- lifecycle -------------------------------------------------------------

    def open(self, root: InstanceId, protocol: str = "basilic",
             mode: DecisionMode = DecisionMode.SUPERBLOCK, validity=None, source: ProcessId = 0,
             bit_overrides: Optional[dict] = None) -> BasilicInstance:
        self.instance = BasilicInstance(
            self, root, self.pid, self.timeouts, mode=mode, protocol=protocol,
            validity=validity, source=source, on_decided=self._on_decided,
        )
        if bit_overrides:
            self.instance.bit_overrides.update(bit_overrides)
        return self.instance

    def start(self, proposal, now: float):
        self.instance.start(proposal, now)
        self._drain(now)

    def receive(self, msg: SignedMessage, now: float):
        self._local.append((msg, False))
        self._drain(now)

    def wake(self, now: float):
        if self.ec_deadline is not None and now >= self.ec_deadline:
            self._ec_tick(now)
        if self.instance is not None:
            self.instance.on_timer(now)
        self._drain(now)

    def next_deadline(self) -> Optional[float]:
        times = [t for t in (self.ec_deadline,
                             self.instance.next_deadline() if self.instance else None)
                 if t is not None]
        return min(times) if times else None

    def take_outbox(self) -> list[SignedMessage]:
        out, self.outbox = self.outbox, []
        return out

    # -- views -----------------------------------------------------------------

    @property
    def result(self):
        return None if self.instance is None else self.instance.result

    def accused(self) -> set[ProcessId]:
        return {p.accused for p in self.committee.local_pofs}

    def pofs(self) -> tuple[ProofOfFraud, ...]:
        return self.committee.local_pofs

    def confirm_status(self, alpha) -> ConfirmStatus:
        c = self.committee
        return confirm(c.n0, c.h, alpha, len(self.confirmations), bool(self.conflicting_bundles))

    # -- message handling --------------------------------------------------------

    def _drain(self, now: float):
        while self._local:
            msg, own = self._local.popleft()
            self._handle(msg, own, now)

    def _handle(self, msg: SignedMessage, own: bool, now: float):
        try:
            digest = msg.digest
        except (TypeError, ValueError, AttributeError):
            self.rejected += 1
            return
        if digest in self._handled:
            return
        fresh = flatten(msg, self._known)
        if not own and not all(self.pki.verify(m) for m in fresh):
            self.rejected += 1
            logger.debug("p%d dropped %s from p%s: bad signature", self.pid, msg.kind.name, msg.signer)
            return
        self._handled.add(digest)
        self._known.update(m.digest for m in fresh)
        candidates = [m for m in fresh if m.kind in CONFLICT_KINDS and m.signer not in self.blind]
        pofs = check_conflicts(candidates, self.store)
        if pofs:
            self._absorb(pofs, now)
        if msg.kind == Kind.POF_LIST:
            return
        if msg.kind == Kind.DECISION and msg.phase == Phase.CONFIRM:
            self._on_bundle(msg, now)
            return
        if self.instance is None or msg.instance.root() != self.instance.root:
            return
        self.instance.route(msg, now)

    def _absorb(self, pofs: list[ProofOfFraud], now: float):
        self.committee, newly, fresh = update_committee(self.committee, pofs)
        if fresh:
            pairs = []
            for p in fresh:
                pairs.extend((p.first, p.second))
            root = self.instance.root if self.instance is not None else InstanceId(0)
            self.emit(Kind.POF_LIST, root, 0, Phase.NONE, b"", Certificate(0, b"", tuple(pairs)))
        if newly:
            self.exclusion_log.append((now, sorted(newly)))
            logger.info("p%d excluded %s at %.1f ms, h=%d", self.pid, sorted(newly), now, self.committee.h)
            if self.instance is not None:
                self.instance.on_committee_change(now)
        if fresh and self.on_pofs is not None:
            self.on_pofs(self, fresh, now)

    # -- decision bundles ----------------------------------------------------------

    def _on_decided(self, result, now: float):
        self.decided_at = now
        if self.on_decision is not None:
            self.on_decision(self, result, now)
        if not isinstance(result, Outcome):
            return
        self.ec = EcSequence.from_outcome(result)
        self.ec.propose_ec(0)
        cert = self.instance.decision_certificate()
        self.bundle = self.emit(Kind.DECISION, self.instance.root, 0, Phase.CONFIRM, result.encode(), cert)
        early, self._early_bundles = self._early_bundles, []
        for msg in early:
            self._on_bundle(msg, now)

    def _on_bundle(self, msg: SignedMessage, now: float):
        if self.instance is None or self.instance.protocol != "basilic":
            return
        if msg.instance.root() != self.instance.root:
            return
        outcome = verify_bundle(msg, self.instance.root, self.committee.roster, self.committee.h)
        if outcome is None:
            self.bad_bundles += 1
            return
        mine = self.instance.result
        if mine is None:
            self._early_bundles.append(msg)
            return
        self.received_bundles.setdefault(msg.signer, msg)
        if outcome.encode() == mine.encode():
            self.confirmations.add(msg.signer)
            self._check_confirmed(now)
            return
        self.conflicting_bundles.add(msg.signer)
        if self.ec.discover(outcome):
            logger.info("p%d saw a conflicting decision from p%d", self.pid, msg.signer)
            if msg.digest not in self._relayed_bundles:
                self._relayed_bundles.add(msg.digest)
                self.rebroadcast([msg])
            if self.ec_deadline is None:
                self.ec_deadline = now + self.timeouts.delta

    def _ec_tick(self, now: float):
        self.ec_deadline = None
        self.ec.propose_ec(self.ec.epoch + 1)
        if self.ec.pending:
            self.ec_deadline = now + self.timeouts.delta

    def _check_confirmed(self, now: float):
        if self.alpha is None or self.confirmed_at is not None:
            return
        if self.confirm_status(self.alpha) == ConfirmStatus.CONFIRMED:
            self.confirmed_at = now
            logger.debug("p%d alpha-confirmed its decision with %d certificates at %.1f ms",
                         self.pid, len(self.confirmations), now)
