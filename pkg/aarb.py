"""Actively accountable reliable broadcast (INIT / ECHO / READY with certificates)."""
from __future__ import annotations

import logging
from typing import Optional

from aabc import Host, ProtocolError, TimeoutPolicy
from committee import Committee
from signing import Certificate, InstanceId, Kind, Phase, ProcessId, SignedMessage

logger = logging.getLogger(__name__)


class ReliableBroadcast:
    """One AARB instance, keyed by (consensus index, source)."""

    def __init__(self, host: Host, instance: InstanceId, pid: ProcessId, timeouts: TimeoutPolicy):
        self.host = host
        self.instance = instance
        self.source = instance.sub
        self.pid = pid
        self.timeouts = timeouts
        self.started = False
        self.sent_init = False
        self.sent_echo = False
        self.sent_ready = False
        self.delivered: Optional[bytes] = None
        self.delivery_cert: Optional[Certificate] = None
        self.delivered_at: Optional[float] = None
        self.deadline: Optional[float] = None
        self.invalid = 0
        self.timeouts_fired = 0
        self.echoes: dict[bytes, dict[ProcessId, SignedMessage]] = {}
        self._echoed_by: set[ProcessId] = set()
        self._seen: list[SignedMessage] = []
        self._rebroadcast: set[bytes] = set()

    @property
    def committee(self) -> Committee:
        return self.host.committee

    @property
    def done(self) -> bool:
        return self.delivered is not None

    def start(self, now: float):
        """Arm the exchange timer; every process does this when the instance opens."""
        if not self.started:
            self.started = True
            if not self.done:
                self.deadline = now + self.timeouts.timeout(0)

    def broadcast(self, value: bytes, now: float):
        if self.pid != self.source:
            raise ProtocolError("not the source")
        if self.sent_init:
            raise ProtocolError("already started")
        self.start(now)
        self.sent_init = True
        self.host.emit(Kind.INIT, self.instance, 0, Phase.RB, value)

    def ready_cert_valid(self, value: bytes, cert: Optional[Certificate]) -> bool:
        if cert is None:
            return False
        signers = {
            m.signer for m in cert.messages
            if m.kind == Kind.ECHO and m.phase == Phase.RB
            and m.instance == self.instance and m.payload == value
        }
        return self.committee.count(signers) >= self.committee.h

    def on_message(self, msg: SignedMessage, now: float):
        if msg.kind == Kind.INIT:
            if msg.signer != self.source:
                return
            self._seen.append(msg)
            if not self.sent_echo:
                self.sent_echo = True
                self.host.emit(Kind.ECHO, self.instance, 0, Phase.RB, msg.payload)
        elif msg.kind == Kind.ECHO:
            if msg.signer in self._echoed_by:
                return
            self._echoed_by.add(msg.signer)
            self.echoes.setdefault(msg.payload, {})[msg.signer] = msg
            self._seen.append(msg)
        elif msg.kind == Kind.READY:
            if self.done and self.sent_ready:
                return
            if not self.ready_cert_valid(msg.payload, msg.certificate):
                self.invalid += 1
                return
            self._deliver(msg.payload, msg.certificate, now)
            return
        else:
            return
        moved = self._check_echoes(now)
        if not moved and self.started and not self.done and self.deadline is None:
            self.deadline = now + self.timeouts.timeout(self.timeouts_fired)

    def _check_echoes(self, now: float) -> bool:
        if self.sent_ready:
            return False
        c = self.committee
        for value, by in self.echoes.items():
            active = sorted(s for s in by if c.is_active(s))
            if len(active) >= c.h:
                cert = Certificate(0, value, tuple(by[s] for s in active[: c.h]))
                self._deliver(value, cert, now)
                return True
        return False

    def _deliver(self, value: bytes, cert: Certificate, now: float):
        if self.delivered is None:
            self.delivered = value
            self.delivery_cert = cert
            self.delivered_at = now
            self.deadline = None
            logger.debug("p%d delivered from p%d", self.pid, self.source)
        if not self.sent_ready:
            self.sent_ready = True
            self.host.emit(Kind.READY, self.instance, 0, Phase.RB, value, cert)

    def on_timer(self, now: float):
        if self.done or self.deadline is None or now < self.deadline:
            return
        self.timeouts_fired += 1
        fresh = [m for m in self._seen if m.digest not in self._rebroadcast]
        if fresh:
            self._rebroadcast.update(m.digest for m in fresh)
            self.host.rebroadcast(fresh)
            self.deadline = now + self.timeouts.timeout(self.timeouts_fired)
        else:
            self.deadline = None

    def on_committee_change(self, now: float):
        if self.done:
            return
        if not self._check_echoes(now) and self.started:
            self.deadline = now + self.timeouts.timeout(self.timeouts_fired)
