# conftest.py

import numpy as np
import pytest

from aabc import TimeoutPolicy
from committee import Committee
from scenario import from_dict
from signing import Pki, SignedMessage, make_scheme
from simnet import Simulation, build_spec, honest_inputs


class FakeHost:
    """Collects what a state machine emits; messages stay unsigned."""

    def __init__(self, n=4, h0=3, pid=0, excluded=()):
        self.committee = Committee.create(range(n), h0, excluded)
        self.relay_base = n
        self.pid = pid
        self.sent = []
        self.rebroadcasts = []

    def emit(self, kind, instance, round_, phase, payload, certificate=None):
        msg = SignedMessage(kind=kind, instance=instance, round=round_, phase=phase,
                            payload=payload, signer=self.pid, certificate=certificate)
        self.sent.append(msg)
        return msg

    def rebroadcast(self, msgs):
        self.rebroadcasts.extend(msgs)

    def kinds(self):
        return [m.kind for m in self.sent]


@pytest.fixture
def host():
    return FakeHost()


@pytest.fixture
def simulate():
    """Run one scenario dict for one seed and hand back (scenario, SimResult)."""
    def run(raw, seed=1):
        sc = from_dict(raw)
        spec = build_spec(sc, seed)
        roster = tuple(range(sc.n))
        pki, keys = Pki.generate(make_scheme(sc.signature), roster, seed)
        sim = Simulation(
            spec=spec, roster=roster, h0=sc.h0, delays=sc.delay,
            timeouts=TimeoutPolicy(sc.delta_ms, sc.timeouts), gst=sc.gst_ms,
            relay_base=sc.n - sc.q - sc.t, pki=pki, keys=keys, seed=seed,
            protocol=sc.protocol, mode=sc.mode, source=sc.source, horizon=sc.horizon_ms,
        )
        return sc, sim.run(honest_inputs(sc, seed, np.random.default_rng([seed, 99])))
    return run
