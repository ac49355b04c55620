"""
Multi-valued Basilic: n reliable broadcasts feeding n binary consensus
instances, projected to a decision in min-index or superblock mode.

Also holds the decision bundle (what a process broadcasts once it decides),
the confirm rule and the eventual-consensus sequence that reconciles forks.
"""
from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Optional

from aabc import BinaryConsensus, Host, ProtocolError, TimeoutPolicy, encode_bits
from aarb import ReliableBroadcast
from analysis import alpha_confirm_threshold
from signing import Certificate, InstanceId, Kind, Phase, ProcessId, SignedMessage
from utils import canonical_json

logger = logging.getLogger(__name__)


class DecisionMode(str, Enum):
    MIN_INDEX = "min-index"
    SUPERBLOCK = "superblock"


class ConfirmStatus(str, Enum):
    CONFIRMED = "confirmed"
    DISAGREEMENT = "disagreement-detected"
    PENDING = "pending"


@dataclass(frozen=True)
class Proposal:
    value: bytes
    proposer: ProcessId

    def __post_init__(self):
        if not self.value:
            raise ValueError("empty proposal")


def superblock(values: Iterable[bytes]) -> bytes:
    """Deterministic union: distinct values in lexicographic order, length-prefixed."""
    return b"".join(struct.pack(">I", len(v)) + v for v in sorted(set(values)))


def split_superblock(block: bytes) -> list[bytes]:
    out, i = [], 0
    while i + 4 <= len(block):
        (size,) = struct.unpack_from(">I", block, i)
        out.append(block[i + 4:i + 4 + size])
        i += 4 + size
    return out


def project(mode: DecisionMode, roster: tuple, bits: tuple, values: dict) -> bytes:
    ones = [k for k, b in zip(roster, bits) if b == 1]
    if not ones:
        return b""
    if mode == DecisionMode.MIN_INDEX:
        return values[min(ones)]
    return superblock(values[k] for k in ones)


@dataclass(frozen=True)
class Outcome:
    """Bit vector of the binary instances plus the values of the bit-1 indices."""
    roster: tuple
    bits: tuple
    values: tuple          # ((pid, value), ...) for bit-1 indices, roster order
    mode: DecisionMode

    @property
    def value_map(self) -> dict:
        return dict(self.values)

    @property
    def decided(self) -> bytes:
        return project(self.mode, self.roster, self.bits, self.value_map)

    def value_set(self) -> list[bytes]:
        return sorted(set(v for _, v in self.values))

    def encode(self) -> bytes:
        return canonical_json({
            "mode": self.mode.value,
            "bits": list(self.bits),
            "values": [[k, v.hex()] for k, v in self.values],
        })

    @classmethod
    def decode(cls, payload: bytes, roster: tuple) -> Optional["Outcome"]:
        try:
            raw = json.loads(payload)
            bits = tuple(int(b) for b in raw["bits"])
            values = tuple((int(k), bytes.fromhex(v)) for k, v in raw["values"])
            mode = DecisionMode(raw["mode"])
        except (ValueError, KeyError, TypeError):
            return None
        if len(bits) != len(roster) or any(b not in (0, 1) for b in bits):
            return None
        ones = {k for k, b in zip(roster, bits) if b == 1}
        if {k for k, _ in values} != ones:
            return None
        return cls(roster=roster, bits=bits, values=values, mode=mode)


def bundle_certificate(outcome: Outcome, rb: dict, bc: dict) -> Certificate:
    msgs: list[SignedMessage] = []
    for k, _ in outcome.values:
        msgs.extend(rb[k].delivery_cert.messages)
    for k in outcome.roster:
        msgs.extend(bc[k].justification())
    seen, unique = set(), []
    for m in msgs:
        if m.digest not in seen:
            seen.add(m.digest)
            unique.append(m)
    digest = hashlib.sha256(outcome.encode()).digest()
    return Certificate(0, digest, tuple(unique))


def verify_bundle(msg: SignedMessage, root: InstanceId, roster: tuple, h: int) -> Optional[Outcome]:
    """
    Outcome carried by a decision bundle if every bit and value is backed by
    h distinct roster signers. Excluded signers still count: the sender may
    have built the bundle before it learnt of them.
    """
    outcome = Outcome.decode(msg.payload, roster)
    if outcome is None or msg.certificate is None:
        return None
    members = set(roster)

    def count(signers):
        return len(signers & members)

    by_sub: dict[int, list[SignedMessage]] = {}
    for m in msg.certificate.messages:
        if m.instance.root() == root:
            by_sub.setdefault(m.instance.sub, []).append(m)
    for k, bit in zip(outcome.roster, outcome.bits):
        want = encode_bits({bit})
        per_round: dict[int, set] = {}
        for m in by_sub.get(k, ()):
            if m.kind == Kind.ECHO and m.phase == Phase.AUX and m.payload == want and m.round % 2 == bit:
                per_round.setdefault(m.round, set()).add(m.signer)
        if not any(count(s) >= h for s in per_round.values()):
            return None
    for k, value in outcome.values:
        signers = {
            m.signer for m in by_sub.get(k, ())
            if m.kind == Kind.ECHO and m.phase == Phase.RB and m.payload == value
        }
        if count(signers) < h:
            return None
    return outcome


def confirm(n: int, h: int, alpha, count: int, conflict_seen: bool) -> ConfirmStatus:
    if conflict_seen:
        return ConfirmStatus.DISAGREEMENT
    if count >= alpha_confirm_threshold(n, h, alpha):
        return ConfirmStatus.CONFIRMED
    return ConfirmStatus.PENDING


class BasilicInstance:
    """
    All sub-instances of one consensus index hosted by one process.

    protocol "basilic" runs the full reduction; "aabc" and "aarb" host a single
    binary consensus (sub 0) or a single broadcast (sub = source) so the
    building blocks can be simulated on their own.
    """

    def __init__(self, host: Host, root: InstanceId, pid: ProcessId, timeouts: TimeoutPolicy,
                 mode: DecisionMode = DecisionMode.SUPERBLOCK, protocol: str = "basilic",
                 validity: Optional[Callable[[bytes], bool]] = None, source: ProcessId = 0,
                 on_decided: Optional[Callable[[object, float], None]] = None):
        self.host = host
        self.root = root
        self.pid = pid
        self.mode = DecisionMode(mode)
        self.protocol = protocol
        self.validity = validity
        self.on_decided = on_decided
        self.roster = host.committee.roster
        self.bit_overrides: dict[ProcessId, int] = {}
        self.zero_phase = False
        self.result = None
        self.decided_at: Optional[float] = None
        self.invalid_proposals = 0
        if protocol == "basilic":
            subs_rb = subs_bc = self.roster
        elif protocol == "aabc":
            subs_rb, subs_bc = (), (0,)
        elif protocol == "aarb":
            subs_rb, subs_bc = (source,), ()
        else:
            raise ValueError(f"unknown protocol {protocol!r}")
        self.rb = {k: ReliableBroadcast(host, root.with_sub(k), pid, timeouts) for k in subs_rb}
        self.bc = {k: BinaryConsensus(host, root.with_sub(k), pid, timeouts) for k in subs_bc}
        self._rejected: set[ProcessId] = set()

    # -- lifecycle -----------------------------------------------------------

    def start(self, proposal, now: float):
        if self.protocol == "aabc":
            if proposal is not None:
                self.bc[0].propose(int(proposal), now)
        else:
            for rb in self.rb.values():
                rb.start(now)
            if proposal is not None and self.pid in self.rb:
                self.rb[self.pid].broadcast(bytes(proposal), now)
            for k, bit in sorted(self.bit_overrides.items()):
                if k in self.bc and not self.bc[k].started:
                    self.bc[k].propose(bit, now)
        self.advance(now)

    def route(self, msg: SignedMessage, now: float):
        sub = msg.instance.sub
        if msg.kind in (Kind.INIT, Kind.READY) or (msg.kind == Kind.ECHO and msg.phase == Phase.RB):
            target = self.rb.get(sub)
        elif msg.kind in (Kind.EST, Kind.BVECHO, Kind.BVREADY, Kind.COORD, Kind.ECHO, Kind.DECISION):
            target = self.bc.get(sub)
        else:
            target = None
        if target is None:
            return
        target.on_message(msg, now)
        self.advance(now)

    def on_timer(self, now: float):
        for inst in self._subs():
            inst.on_timer(now)
        self.advance(now)

    def on_committee_change(self, now: float):
        for inst in self._subs():
            inst.on_committee_change(now)
        self.advance(now)

    def next_deadline(self) -> Optional[float]:
        pending = [i.deadline for i in self._subs() if i.deadline is not None]
        return min(pending) if pending else None

    def _subs(self):
        return list(self.rb.values()) + list(self.bc.values())

    # -- reduction -----------------------------------------------------------

    def advance(self, now: float):
        if self.result is not None:
            return
        if self.protocol == "aabc":
            bc = self.bc[0]
            if bc.done:
                self._finish(bc.decided, now)
            return
        if self.protocol == "aarb":
            rb = next(iter(self.rb.values()))
            if rb.done:
                self._finish(rb.delivered, now)
            return
        c = self.host.committee
        for k in self.roster:
            rb, bc = self.rb[k], self.bc[k]
            if not rb.done or bc.started or k in self.bit_overrides:
                continue
            if self.validity is not None and not self.validity(rb.delivered):
                if k not in self._rejected:
                    self._rejected.add(k)
                    self.invalid_proposals += 1
                continue
            bc.propose(1, now)
        ones = sum(1 for bc in self.bc.values() if bc.decided == 1)
        if not self.zero_phase and ones >= c.h:
            self.zero_phase = True
            for k in self.roster:
                if not self.bc[k].started:
                    self.bc[k].propose(0, now)
        if not all(bc.done for bc in self.bc.values()):
            return
        bits = tuple(self.bc[k].decided for k in self.roster)
        ones_idx = [k for k, b in zip(self.roster, bits) if b == 1]
        # bundles certify every bit-1 value, so wait for all of them in both modes
        if any(not self.rb[k].done for k in ones_idx):
            return
        values = tuple((k, self.rb[k].delivered) for k in ones_idx)
        outcome = Outcome(roster=self.roster, bits=bits, values=values, mode=self.mode)
        self._finish(outcome, now)

    def _finish(self, result, now: float):
        self.result = result
        self.decided_at = now
        if self.on_decided is not None:
            self.on_decided(result, now)

    def decision_certificate(self) -> Optional[Certificate]:
        if not isinstance(self.result, Outcome):
            return None
        return bundle_certificate(self.result, self.rb, self.bc)


@dataclass
class EcSequence:
    """Per-epoch outputs of the eventual-consensus variant for one index."""
    roster: tuple
    mode: DecisionMode
    bits: list
    values: dict
    epoch: int = -1
    outputs: list = field(default_factory=list)
    pending: list = field(default_factory=list)
    treated: set = field(default_factory=set)

    @classmethod
    def from_outcome(cls, outcome: Outcome) -> "EcSequence":
        seq = cls(roster=outcome.roster, mode=outcome.mode, bits=list(outcome.bits),
                  values=outcome.value_map)
        seq.treated.add(outcome.encode())
        return seq

    @property
    def current(self) -> bytes:
        return project(self.mode, self.roster, tuple(self.bits), self.values)

    def discover(self, other: Outcome) -> bool:
        """Queue a disagreement; False if it was already treated."""
        key = other.encode()
        if key in self.treated or any(p.encode() == key for p in self.pending):
            return False
        self.pending.append(other)
        return True

    def propose_ec(self, j: int) -> bytes:
        if j != self.epoch + 1:
            raise ProtocolError(f"epoch {j} requested before epoch {self.epoch + 1}")
        self.epoch = j
        if j > 0:
            for other in self.pending:
                theirs = other.value_map
                for i, k in enumerate(self.roster):
                    if other.bits[i] != 1:
                        continue
                    if self.bits[i] != 1:
                        self.bits[i] = 1
                        self.values[k] = theirs[k]
                    elif self.values[k] != theirs[k]:
                        self.values[k] = min(self.values[k], theirs[k])
                self.treated.add(other.encode())
            self.pending.clear()
        self.outputs.append(self.current)
        return self.outputs[-1]
