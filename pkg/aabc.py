"""
Actively accountable binary consensus.

One BinaryConsensus object is one instance for one process. It is an
event-driven state machine: the owning node feeds it verified messages,
timer wake-ups and committee changes, and it answers by emitting signed
messages through the node.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Protocol

from config import BACKOFF_FACTOR
from committee import Committee
from signing import Certificate, InstanceId, Kind, Phase, ProcessId, SignedMessage

logger = logging.getLogger(__name__)


class ProtocolError(RuntimeError):
    pass


BITS_MASK = {frozenset({0}): 1, frozenset({1}): 2, frozenset({0, 1}): 3}
MASK_BITS = {v: k for k, v in BITS_MASK.items()}


def encode_bits(bits) -> bytes:
    return bytes([BITS_MASK[frozenset(bits)]])


def decode_bits(payload: bytes) -> Optional[frozenset]:
    if len(payload) != 1:
        return None
    return MASK_BITS.get(payload[0])


def decode_bit(payload: bytes) -> Optional[int]:
    if len(payload) == 1 and payload[0] in (0, 1):
        return payload[0]
    return None


@dataclass(frozen=True)
class TimeoutPolicy:
    delta: float
    schedule: str = "const"

    def timeout(self, fired: int) -> float:
        if self.schedule == "backoff":
            return self.delta * BACKOFF_FACTOR ** fired
        return self.delta


class Host(Protocol):
    committee: Committee
    relay_base: int

    def emit(self, kind: Kind, instance: InstanceId, round_: int, phase: Phase,
             payload: bytes, certificate: Optional[Certificate] = None) -> SignedMessage: ...

    def rebroadcast(self, msgs: list[SignedMessage]) -> None: ...


def relay_threshold(relay_base: int, d_r: int) -> int:
    """Distinct senders of v after which a process echoes v itself."""
    return max(1, -(-relay_base // 2) - d_r)


@dataclass
class RoundState:
    supporters: dict = field(default_factory=lambda: {0: {}, 1: {}})   # v -> signer -> EST/BVECHO
    readies: dict = field(default_factory=lambda: {0: [], 1: []})     # v -> BVREADY msgs
    sent_bvecho: set = field(default_factory=set)
    sent_bvready: set = field(default_factory=set)
    bin_vals: dict = field(default_factory=dict)                       # v -> bv certificate, delivery order
    coord_value: Optional[int] = None
    sent_coord: bool = False
    aux: frozenset = frozenset()
    echoes: dict = field(default_factory=dict)                         # signer -> (msg, bits)
    sent_echo: bool = False
    seen: list = field(default_factory=list)


class BinaryConsensus:
    def __init__(self, host: Host, instance: InstanceId, pid: ProcessId, timeouts: TimeoutPolicy):
        self.host = host
        self.instance = instance
        self.pid = pid
        self.timeouts = timeouts
        self.started = False
        self.est: Optional[int] = None
        self.round = 0
        self.phase = Phase.NONE
        self.deadline: Optional[float] = None
        self.decided: Optional[int] = None
        self.decision_round: Optional[int] = None
        self.decision_cert: Optional[Certificate] = None
        self.decided_at: Optional[float] = None
        self.uncertified = 0
        self.timeouts_fired = 0
        self._next_cert: Optional[Certificate] = None
        self._rounds: dict[int, RoundState] = {}
        self._pending_decisions: list[SignedMessage] = []
        self._rebroadcast: set[bytes] = set()
        self._cert_cache: dict[tuple, bool] = {}

    # -- views -------------------------------------------------------------

    @property
    def committee(self) -> Committee:
        return self.host.committee

    @property
    def done(self) -> bool:
        return self.decided is not None

    def _rs(self, r: int) -> RoundState:
        rs = self._rounds.get(r)
        if rs is None:
            rs = self._rounds[r] = RoundState()
        return rs

    def bin_vals(self, r: Optional[int] = None) -> dict:
        return dict(self._rs(self.round if r is None else r).bin_vals)

    # -- certificate checks ----------------------------------------------------

    def _echo_cert_ok(self, v: int, rnd: int, cert: Optional[Certificate]) -> bool:
        if cert is None:
            return False
        want = encode_bits({v})
        signers = {
            m.signer for m in cert.messages
            if m.kind == Kind.ECHO and m.phase == Phase.AUX and m.instance == self.instance
            and m.round == rnd and m.payload == want
        }
        return self.committee.count(signers) >= self.committee.h

    def _bv_cert_ok(self, v: int, rnd: int, cert: Optional[Certificate]) -> bool:
        if cert is None:
            return False
        want = bytes([v])
        signers = set()
        for m in cert.messages:
            if (m.kind in (Kind.EST, Kind.BVECHO) and m.instance == self.instance
                    and m.round == rnd and m.payload == want
                    and self.cert_valid(v, rnd - 1, m.certificate)):
                signers.add(m.signer)
        return self.committee.count(signers) >= self.committee.h

    def cert_valid(self, v: int, rnd: int, cert: Optional[Certificate]) -> bool:
        """Does cert justify estimate v at the end of round rnd?"""
        if rnd <= 0:
            return True
        if v == rnd % 2 and rnd == 1:
            return True
        key = (v, rnd, cert.encoding if cert is not None else b"", self.committee.local_deceitful)
        hit = self._cert_cache.get(key)
        if hit is not None:
            return hit
        if v != rnd % 2:
            ok = self._echo_cert_ok(v, rnd, cert)
        else:
            ok = self._bv_cert_ok(v, rnd, cert) or self._echo_cert_ok(v, rnd, cert)
        self._cert_cache[key] = ok
        return ok

    def decision_valid(self, msg: SignedMessage) -> bool:
        v = decode_bit(msg.payload)
        return (
            v is not None and msg.round >= 1 and v == msg.round % 2
            and self._echo_cert_ok(v, msg.round, msg.certificate)
        )

    # -- inputs ----------------------------------------------------------------

    def propose(self, v: int, now: float):
        if self.started:
            raise ProtocolError("already started")
        if v not in (0, 1):
            raise ValueError(f"binary proposal expected, got {v!r}")
        self.started = True
        if self.done:
            return
        self.est = v
        self._start_round(1, None, now)
        self._progress(now)

    def on_message(self, msg: SignedMessage, now: float):
        if msg.kind == Kind.DECISION:
            if not self.done:
                if self.decision_valid(msg):
                    self._adopt_decision(msg, now)
                else:
                    self.uncertified += 1
            return
        if self.done:
            return
        rnd = msg.round
        if rnd < 1:
            return
        rs = self._rs(rnd)
        if msg.kind in (Kind.EST, Kind.BVECHO):
            v = decode_bit(msg.payload)
            if v is None:
                return
            if not self.cert_valid(v, rnd - 1, msg.certificate):
                self.uncertified += 1
                return
            if msg.signer in rs.supporters[v]:
                return
            rs.supporters[v][msg.signer] = msg
        elif msg.kind == Kind.BVREADY:
            v = decode_bit(msg.payload)
            if v is None:
                return
            if not self._bv_cert_ok(v, rnd, msg.certificate):
                self.uncertified += 1
                return
            rs.readies[v].append(msg)
        elif msg.kind == Kind.COORD:
            v = decode_bit(msg.payload)
            if v is None or msg.signer != self.committee.coordinator(rnd) or rs.coord_value is not None:
                return
            rs.coord_value = v
        elif msg.kind == Kind.ECHO:
            bits = decode_bits(msg.payload)
            if bits is None or msg.signer in rs.echoes:
                return
            rs.echoes[msg.signer] = (msg, bits)
        else:
            return
        rs.seen.append(msg)
        if self.started:
            moved = self._progress(now)
            if not moved and self.deadline is None:
                self.deadline = now + self.timeouts.timeout(self.timeouts_fired)

    def on_timer(self, now: float):
        if not self.started or self.done or self.deadline is None or now < self.deadline:
            return
        if self._progress(now):
            return
        self.timeouts_fired += 1
        rs = self._rs(self.round)
        out = [m for m in rs.seen if m.phase == self.phase]
        for r, later in self._rounds.items():
            if r > self.round:
                out.extend(later.seen)
        fresh = [m for m in out if m.digest not in self._rebroadcast]
        if fresh:
            self._rebroadcast.update(m.digest for m in fresh)
            self.host.rebroadcast(fresh)
            self.deadline = now + self.timeouts.timeout(self.timeouts_fired)
        else:
            self.deadline = None

    def on_committee_change(self, now: float):
        if not self.started or self.done:
            return
        self._cert_cache.clear()
        if not self._progress(now):
            self.deadline = now + self.timeouts.timeout(self.timeouts_fired)

    # -- state machine ---------------------------------------------------------

    def _start_round(self, r: int, cert: Optional[Certificate], now: float):
        self.round = r
        self.phase = Phase.ABV
        self.deadline = now + self.timeouts.timeout(self.timeouts_fired)
        rs = self._rs(r)
        rs.sent_bvecho.add(self.est)
        self.host.emit(Kind.EST, self.instance, r, Phase.ABV, bytes([self.est]), cert)

    def _expired(self, now: float) -> bool:
        return self.deadline is None or now >= self.deadline

    def _progress(self, now: float) -> bool:
        """Apply every enabled rule; True if the phase or round advanced."""
        moved = False
        while not self.done:
            rs = self._rs(self.round)
            self._abv_rules(rs)
            if self.phase == Phase.ABV:
                self._coordinator_rule(rs)
                if rs.bin_vals and self._expired(now):
                    self._enter_aux(rs, now)
                    moved = True
                    continue
                return moved
            if self.phase == Phase.AUX:
                vals = self.comp_vals(rs)
                if vals and self._expired(now):
                    self._decide_step(rs, vals, now)
                    moved = True
                    continue
                return moved
            return moved
        return moved

    def _abv_rules(self, rs: RoundState):
        c = self.committee
        relay_at = relay_threshold(self.host.relay_base, c.d_r)
        r = self.round
        for v in (0, 1):
            sup = {s: m for s, m in rs.supporters[v].items() if c.is_active(s)}
            if v not in rs.sent_bvecho and len(sup) >= relay_at:
                cert = min(
                    (m.certificate for m in sup.values()),
                    key=lambda ct: b"" if ct is None else ct.encoding,
                )
                rs.sent_bvecho.add(v)
                self.host.emit(Kind.BVECHO, self.instance, r, Phase.ABV, bytes([v]), cert)
            if v not in rs.bin_vals and len(sup) >= c.h:
                chosen = [sup[s] for s in sorted(sup)[: c.h]]
                bv_cert = Certificate(r, bytes([v]), tuple(chosen))
                self._deliver(rs, v, bv_cert)
        for v in (0, 1):
            if v not in rs.bin_vals and rs.readies[v]:
                self._deliver(rs, v, rs.readies[v][0].certificate)

    def _deliver(self, rs: RoundState, v: int, bv_cert: Certificate):
        rs.bin_vals[v] = bv_cert
        if v not in rs.sent_bvready:
            rs.sent_bvready.add(v)
            self.host.emit(Kind.BVREADY, self.instance, self.round, Phase.ABV, bytes([v]), bv_cert)

    def _coordinator_rule(self, rs: RoundState):
        if rs.sent_coord or not rs.bin_vals:
            return
        if self.committee.coordinator(self.round) != self.pid:
            return
        rs.sent_coord = True
        w = next(iter(rs.bin_vals))
        self.host.emit(Kind.COORD, self.instance, self.round, Phase.AUX, bytes([w]))

    def _enter_aux(self, rs: RoundState, now: float):
        if rs.coord_value is not None and rs.coord_value in rs.bin_vals:
            aux = {rs.coord_value}
        else:
            aux = set(rs.bin_vals)
        rs.aux = frozenset(aux)
        self.phase = Phase.AUX
        self.deadline = now + self.timeouts.timeout(self.timeouts_fired)
        if not rs.sent_echo:
            rs.sent_echo = True
            self.host.emit(Kind.ECHO, self.instance, self.round, Phase.AUX, encode_bits(aux))

    def comp_vals(self, rs: RoundState) -> frozenset:
        return comp_vals(
            [(s, bits) for s, (_, bits) in rs.echoes.items() if self.committee.is_active(s)],
            frozenset(rs.bin_vals),
            rs.aux,
            self.committee.h,
        )

    def _echo_cert(self, rs: RoundState, v: int) -> Certificate:
        want = frozenset({v})
        chosen = [
            rs.echoes[s][0] for s in sorted(rs.echoes)
            if self.committee.is_active(s) and rs.echoes[s][1] == want
        ][: self.committee.h]
        if len(chosen) < self.committee.h:
            raise AssertionError("cannot assemble an echo certificate")
        return Certificate(self.round, bytes([v]), tuple(chosen))

    def _decide_step(self, rs: RoundState, vals: frozenset, now: float):
        r = self.round
        parity = r % 2
        if len(vals) == 1:
            (v,) = vals
            self.est = v
            cert = self._echo_cert(rs, v)
            if v == parity:
                self._decide(v, r, cert, now)
                self.host.emit(Kind.DECISION, self.instance, r, Phase.DECIDE, bytes([v]), cert)
                return
        else:
            self.est = parity
            cert = None if r == 1 else rs.bin_vals[parity]
        self._start_round(r + 1, cert, now)

    def _decide(self, v: int, r: int, cert: Certificate, now: float):
        self.decided = v
        self.decision_round = r
        self.decision_cert = cert
        self.decided_at = now
        self.deadline = None
        self.phase = Phase.DECIDE
        logger.debug("p%d decided %d in %s round %d", self.pid, v, self.instance, r)

    def justification(self) -> list[SignedMessage]:
        """Decision certificate plus the bv-certificates of every round up to it."""
        if self.decision_cert is None:
            return []
        msgs = list(self.decision_cert.messages)
        for r in sorted(self._rounds):
            if r > self.decision_round:
                break
            for cert in self._rounds[r].bin_vals.values():
                if cert is not None:
                    msgs.extend(cert.messages)
        return msgs

    def _adopt_decision(self, msg: SignedMessage, now: float):
        v = decode_bit(msg.payload)
        self.started = True
        self._decide(v, msg.round, msg.certificate, now)
        self.host.emit(Kind.DECISION, self.instance, msg.round, Phase.DECIDE, msg.payload, msg.certificate)


def comp_vals(echoes: list[tuple[ProcessId, frozenset]], bin_vals: frozenset,
              aux: frozenset, h: int) -> frozenset:
    """
    Values justified by h ECHO messages of the current round.
    echoes holds (signer, bits) of distinct active signers.
    """
    if aux and sum(1 for _, bits in echoes if bits == aux) >= h:
        return frozenset(aux)
    inside = [bits for _, bits in echoes if bits <= bin_vals]
    if len(inside) >= h:
        return frozenset().union(*inside)
    return frozenset()
