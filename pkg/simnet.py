"""
Deterministic discrete-event network.

Virtual time only. Events are ordered by (time, seq) with seq assigned at
send, so a seed fully determines a run. Messages are never lost by the
network; before GST a delay can be anything the model draws, from GST on a
message sent at s is delivered by max(s, GST) + delta.
"""
from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from aabc import TimeoutPolicy
from adversary import (
    Actor,
    Attack,
    AdversarySpec,
    Role,
    assign_roles,
    benign_step,
    crashed,
    deceitful_step,
    default_partition_count,
    split_partitions,
)
from analysis import AnalysisError, max_branches
from basilic import DecisionMode, Outcome
from committee import Committee, FaultProfile, detection_threshold, threshold_tolerated
from config import (
    CSV_SCHEMA_VERSION,
    GAMMA_DEFAULT_SCALE_MS,
    GAMMA_DEFAULT_SHAPE,
    HORIZON_FACTOR,
    TRACE_JITTER_MS,
)
from node import Node
from signing import InstanceId, Pki, ProcessId, make_scheme
from utils import as_fraction, canonical_json

logger = logging.getLogger(__name__)

START, DELIVER, TIMER = 0, 1, 2
DELAY_KINDS = ("uniform", "gamma", "trace")


@dataclass(frozen=True, order=True)
class SimEvent:
    time: float
    seq: int
    kind: int = field(compare=False)
    to: Actor = field(compare=False)
    sender: Optional[Actor] = field(default=None, compare=False)
    message: object = field(default=None, compare=False)   # SignedMessage, or the proposal for START


@dataclass(frozen=True)
class DelayModel:
    kind: str = "uniform"
    lo: float = 0.0
    hi: float = 0.0
    shape: float = GAMMA_DEFAULT_SHAPE
    scale: float = GAMMA_DEFAULT_SCALE_MS
    table: tuple = ()          # ((region_a, region_b, ms), ...)
    regions: tuple = ()        # region of pid = regions[pid % len(regions)]
    cross: Optional["DelayModel"] = None

    def __post_init__(self):
        if self.kind not in DELAY_KINDS:
            raise ValueError(f"kind: unknown delay model {self.kind!r}")
        if self.kind == "uniform" and not 0 <= self.lo <= self.hi:
            raise ValueError("lo_ms: need 0 <= lo_ms <= hi_ms")
        if self.kind == "gamma" and (self.shape <= 0 or self.scale <= 0):
            raise ValueError("shape: gamma parameters must be positive")
        if self.kind == "trace" and not self.table:
            raise ValueError("table: trace model needs a latency table")

    @classmethod
    def from_dict(cls, raw: dict, cross: Optional[dict] = None) -> "DelayModel":
        kind = raw.get("kind", "uniform")
        table = raw.get("table") or {}
        if isinstance(table, dict):
            rows = tuple(sorted((str(a), str(b), float(ms)) for (a, b), ms in table.items()))
        else:
            rows = tuple(sorted((str(a), str(b), float(ms)) for a, b, ms in table))
        regions = tuple(raw.get("regions") or sorted({r for a, b, _ in rows for r in (a, b)}))
        return cls(
            kind=kind,
            lo=float(raw.get("lo_ms", raw.get("ms", 0.0))),
            hi=float(raw.get("hi_ms", raw.get("ms", raw.get("lo_ms", 0.0)))),
            shape=float(raw.get("shape", GAMMA_DEFAULT_SHAPE)),
            scale=float(raw.get("scale_ms", GAMMA_DEFAULT_SCALE_MS)),
            table=rows,
            regions=regions,
            cross=cls.from_dict(cross) if cross else None,
        )

    def latency(self, a: str, b: str) -> float:
        for x, y, ms in self.table:
            if (x, y) == (a, b) or (x, y) == (b, a):
                return ms
        raise KeyError(f"no latency entry for ({a}, {b})")

    def draw(self, frm: ProcessId, to: ProcessId, rng: np.random.Generator) -> float:
        if self.kind == "uniform":
            return self.lo if self.lo == self.hi else float(rng.uniform(self.lo, self.hi))
        if self.kind == "gamma":
            return float(rng.gamma(self.shape, self.scale))
        ra = self.regions[frm % len(self.regions)]
        rb = self.regions[to % len(self.regions)]
        return self.latency(ra, rb) + float(rng.uniform(0.0, TRACE_JITTER_MS))


def sample_delay(model: DelayModel, frm: ProcessId, to: ProcessId, rng: np.random.Generator,
                 *, cross: bool = False, now: float = 0.0, gst: float = 0.0,
                 delta: float = float("inf")) -> float:
    m = model.cross if cross and model.cross is not None else model
    d = max(0.0, m.draw(frm, to, rng))
    return min(d, max(now, gst) + delta - now)


@dataclass
class SimResult:
    nodes: dict
    spec: AdversarySpec
    messages: int = 0
    messages_post_gst: int = 0
    intra: list = field(default_factory=list)
    cross: list = field(default_factory=list)
    horizon_hit: bool = False
    end_time: float = 0.0
    trace: list = field(default_factory=list)

    def honest_nodes(self) -> dict[ProcessId, Node]:
        return {a[0]: node for a, node in self.nodes.items() if self.spec.roles[a[0]] == Role.HONEST}

    def delay_ratio(self) -> Optional[float]:
        if not self.intra or not self.cross:
            return None
        return float(np.mean(self.intra)) / float(np.mean(self.cross))


class Simulation:
    """One consensus instance over one committee, run to quiescence or horizon."""

    def __init__(self, *, spec: AdversarySpec, roster: tuple, h0: int, delays: DelayModel,
                 timeouts: TimeoutPolicy, gst: float, relay_base: int, pki: Pki, keys: dict,
                 seed: int, protocol: str = "basilic", mode: DecisionMode = DecisionMode.SUPERBLOCK,
                 root: InstanceId = InstanceId(0), committees: Optional[dict] = None,
                 stores: Optional[dict] = None, validity=None, source: ProcessId = 0,
                 horizon: Optional[float] = None, trace: bool = False, stream: int = 0,
                 fork=None, alpha=None):
        self.spec = spec
        self.roster = tuple(roster)
        self.delays = delays
        self.delta = timeouts.delta
        self.gst = gst
        self.protocol = protocol
        self.mode = mode
        self.root = root
        self.validity = validity
        self.source = source
        self.fork = fork
        self.horizon = horizon if horizon is not None else max(gst, 0.0) + HORIZON_FACTOR * self.delta * len(roster)
        self.trace_on = trace
        self.rng_delay = np.random.default_rng([seed, stream, 0])
        self.rng_adv = np.random.default_rng([seed, stream, 1])
        self._queue: list = []
        self._seq = 0
        self._timers: dict[Actor, set] = {}
        committees = committees or {}
        stores = stores or {}
        coalition = frozenset(spec.coalition)
        self.nodes: dict[Actor, Node] = {}
        for actor in spec.actors():
            pid = actor[0]
            replica = spec.is_replica(actor)
            committee = None if replica else committees.get(pid)
            if committee is None:
                committee = Committee.create(self.roster, h0)
            self.nodes[actor] = Node(
                pid, keys[pid], pki, committee, timeouts, relay_base,
                blind=coalition if replica else frozenset(),
                store=None if replica else stores.get(pid),
            )
            self.nodes[actor].alpha = alpha
        self.result = SimResult(nodes=self.nodes, spec=spec)

    # -- queue -------------------------------------------------------------------

    def _push(self, time: float, kind: int, to: Actor, sender=None, message=None):
        self._seq += 1
        heapq.heappush(self._queue, SimEvent(time, self._seq, kind, to, sender, message))

    def _arm(self, actor: Actor, now: float):
        dl = self.nodes[actor].next_deadline()
        if dl is None:
            return
        dl = max(dl, now)
        pending = self._timers.setdefault(actor, set())
        if dl not in pending:
            pending.add(dl)
            self._push(dl, TIMER, actor)

    def _flush(self, actor: Actor, now: float):
        node = self.nodes[actor]
        out = node.take_outbox()
        if out:
            role = self.spec.roles[actor[0]]
            if role == Role.HONEST:
                sends = [(to, m, 0.0) for m in out for to in self.spec.recipients(actor)]
            elif role == Role.BENIGN:
                sends = benign_step(self.spec, actor, out, now, self.delta, self.rng_adv)
            else:
                sends = [(to, m, 0.0) for to, m in deceitful_step(self.spec, actor, out, self.rng_adv)]
            for to, msg, lag in sends:
                at = now + lag
                cross = self.spec.cross_partition(actor, to)
                d = sample_delay(self.delays, actor[0], to[0], self.rng_delay,
                                 cross=cross, now=at, gst=self.gst, delta=self.delta)
                units = msg.units()
                self.result.messages += units
                if at >= self.gst:
                    self.result.messages_post_gst += units
                if self.spec.roles[actor[0]] == Role.HONEST and self.spec.roles[to[0]] == Role.HONEST:
                    (self.result.cross if cross else self.result.intra).append(d)
                self._push(at + d, DELIVER, to, actor, msg)
        self._arm(actor, now)

    # -- loop ----------------------------------------------------------------------

    def run(self, inputs: dict) -> SimResult:
        """inputs maps each process id to its proposal (or None)."""
        for actor, node in self.nodes.items():
            proposal, overrides = inputs.get(actor[0]), {}
            if self.spec.is_replica(actor):
                proposal, overrides = self.spec.replica_inputs(actor, self.protocol, proposal,
                                                                self.source, self.fork)
            node.open(self.root, self.protocol, self.mode, self.validity, self.source, overrides)
            self._push(0.0, START, actor, None, proposal)
        now = 0.0
        while self._queue:
            ev = heapq.heappop(self._queue)
            time, kind, to, sender, payload = ev.time, ev.kind, ev.to, ev.sender, ev.message
            if time > self.horizon:
                self.result.horizon_hit = True
                logger.warning("horizon %.0f ms reached with %d events queued", self.horizon, len(self._queue) + 1)
                break
            now = time
            if crashed(self.spec, to, now):
                continue
            node = self.nodes[to]
            if kind == START:
                node.start(payload, now)
            elif kind == DELIVER:
                if self.trace_on:
                    self.result.trace.append({
                        "t": round(now, 6), "from": list(sender), "to": list(to),
                        "kind": payload.kind.name, "wire": payload.wire.hex(),
                    })
                node.receive(payload, now)
            else:
                self._timers.get(to, set()).discard(time)
                node.wake(now)
            self._flush(to, now)
        self.result.end_time = now
        return self.result


# ---------------------------------------------------------------------------
# Scenario runs
# ---------------------------------------------------------------------------

@dataclass
class RunRecord:
    scenario: str
    seed: int
    protocol: str
    n: int
    t: int
    d: int
    q: int
    h0: int
    attack: str
    timeouts: str
    decided: int
    honest: int
    branches: int
    accused: list
    min_accused: int
    exclusions: int
    messages: int
    messages_post_gst: int
    last_decision_ms: Optional[float]
    delay_ratio: Optional[float]
    horizon_hit: bool
    decisions: dict = field(default_factory=dict)
    accused_by: dict = field(default_factory=dict)
    detect_fd_ms: Optional[float] = None
    membership_changes: int = 0
    deceitful_ratio: list = field(default_factory=list)
    deposit_flux: Optional[float] = None
    confirmed: int = 0
    out_of_model: str = "-"
    phases: dict = field(default_factory=dict)
    status: str = "ok"
    note: str = "-"
    trace: list = field(default_factory=list, repr=False)
    chain: list = field(default_factory=list, repr=False)

    @property
    def disagreements(self) -> int:
        return max(0, self.branches - 1)

    def row(self) -> dict:
        def num(x):
            return "-" if x is None else f"{x:.3f}"
        return {
            "schema": CSV_SCHEMA_VERSION,
            "scenario": self.scenario,
            "seed": self.seed,
            "protocol": self.protocol,
            "n": self.n, "t": self.t, "d": self.d, "q": self.q,
            "h0": self.h0,
            "attack": self.attack,
            "timeouts": self.timeouts,
            "decided": self.decided,
            "honest": self.honest,
            "branches": self.branches,
            "disagreements": self.disagreements,
            "accused": len(self.accused),
            "min_accused": self.min_accused,
            "exclusions": self.exclusions,
            "messages": self.messages,
            "messages_post_gst": self.messages_post_gst,
            "last_decision_ms": num(self.last_decision_ms),
            "detect_fd_ms": num(self.detect_fd_ms),
            "membership_changes": self.membership_changes,
            "deceitful_ratio": ";".join(f"{r:.4f}" for r in self.deceitful_ratio) or "-",
            "deposit_flux": num(self.deposit_flux),
            "delay_ratio": num(self.delay_ratio),
            "horizon_hit": int(self.horizon_hit),
            "confirmed": self.confirmed,
            "out_of_model": self.out_of_model,
            "status": self.status,
            "note": self.note,
        }

    def to_json(self) -> bytes:
        body = self.row()
        body["decisions"] = {str(k): v for k, v in sorted(self.decisions.items())}
        body["accused_by"] = {str(k): v for k, v in sorted(self.accused_by.items())}
        body["accused_ids"] = sorted(self.accused)
        if self.phases:
            body["phases"] = self.phases
        return canonical_json(body)


def decision_label(result) -> Optional[str]:
    if result is None:
        return None
    if isinstance(result, Outcome):
        return result.decided.hex()
    if isinstance(result, int):
        return str(result)
    return bytes(result).hex()


def build_spec(scenario, seed: int) -> AdversarySpec:
    roles = assign_roles(scenario.n, scenario.t, scenario.d, scenario.q)
    honest = [p for p, r in roles.items() if r == Role.HONEST]
    partitions = scenario.partitions
    if partitions is None and scenario.attack != "none" and honest:
        count = scenario.partition_count
        if count is None:
            try:
                branches = max_branches(scenario.n, scenario.h0, scenario.t + scenario.d)
            except AnalysisError:
                branches = None
            count = default_partition_count(len(honest), branches)
        partitions = split_partitions(honest, count)
    spec = AdversarySpec(roles=roles, attack=scenario.attack,
                         partitions=[list(g) for g in partitions or []], benign=scenario.benign)
    spec.check_profile(scenario.t, scenario.d, scenario.q)
    return spec


def honest_inputs(scenario, seed: int, rng: np.random.Generator) -> dict:
    ids = range(scenario.n)
    if scenario.protocol == "aabc":
        if scenario.proposals is not None:
            return {p: int(scenario.proposals[p]) for p in ids}
        return {p: int(b) for p, b in zip(ids, rng.integers(0, 2, size=scenario.n))}
    if scenario.proposals is not None:
        return {p: str(scenario.proposals[p]).encode() for p in ids}
    tokens = rng.integers(0, 2 ** 31, size=scenario.n)
    return {p: b"batch:p%d:%d" % (p, int(tok)) for p, tok in zip(ids, tokens)}


def out_of_model_reason(profile: FaultProfile, h0: int) -> str:
    """Why threshold h0 does not tolerate the profile, or "-"."""
    safe, live = threshold_tolerated(profile, h0)
    reasons = []
    if not safe:
        reasons.append(f"d+t={profile.dt} >= 2h0-n={2 * h0 - profile.n}")
    if not live:
        reasons.append(f"q+t={profile.q + profile.t} > n-h0={profile.n - h0}")
    return "; ".join(reasons) or "-"


def coalition_of(n: int, t: int, d: int, q: int) -> set[ProcessId]:
    return {p for p, r in assign_roles(n, t, d, q).items() if r in (Role.BYZANTINE, Role.DECEITFUL)}


def assess(record: RunRecord, protocol: str, source_honest: bool, alpha=None) -> RunRecord:
    """Flag violations of the properties the profile is entitled to."""
    profile = FaultProfile(n=record.n, t=record.t, d=record.d, q=record.q)
    safe, live = threshold_tolerated(profile, record.h0)
    record.out_of_model = out_of_model_reason(profile, record.h0)
    problems = []
    if safe and record.branches > 1:
        problems.append("agreement violated")
    must_finish = protocol != "aarb" or source_honest
    if safe and live and must_finish and record.decided < record.honest:
        problems.append("honest process undecided" + (" at horizon" if record.horizon_hit else ""))
    if profile.dt < record.h0:
        bound = max_branches(record.n, record.h0, profile.dt)
        if record.branches > bound:
            problems.append(f"{record.branches} branches exceed bound {bound}")
    f_d = detection_threshold(record.n, record.h0)
    if record.branches > 1 and record.min_accused < f_d:
        problems.append(f"disagreement with only {record.min_accused} accused (< {f_d})")
    framed = sorted(set(record.accused) - coalition_of(record.n, record.t, record.d, record.q))
    if framed:
        problems.append(f"processes outside the coalition accused: {framed}")
    if alpha is not None and record.branches > 1 and record.confirmed and profile.dt <= as_fraction(alpha) * record.n:
        problems.append(f"forked decision alpha-confirmed at {record.confirmed} processes")
    if problems:
        record.status = "violation"
        record.note = "; ".join(problems)
    return record


def run(scenario, seed: int) -> RunRecord:
    """Simulate one single-instance scenario (aabc / aarb / basilic) for one seed."""
    spec = build_spec(scenario, seed)
    roster = tuple(range(scenario.n))
    pki, keys = Pki.generate(make_scheme(scenario.signature), roster, seed)
    inputs = honest_inputs(scenario, seed, np.random.default_rng([seed, 99]))
    sim = Simulation(
        spec=spec, roster=roster, h0=scenario.h0, delays=scenario.delay,
        timeouts=TimeoutPolicy(scenario.delta_ms, scenario.timeouts), gst=scenario.gst_ms,
        relay_base=scenario.n - scenario.q - scenario.t, pki=pki, keys=keys, seed=seed,
        protocol=scenario.protocol, mode=scenario.mode, source=scenario.source,
        horizon=scenario.horizon_ms, trace=scenario.trace, alpha=scenario.alpha,
    )
    res = sim.run(inputs)
    return summarize(scenario, seed, res, spec)


def summarize(scenario, seed: int, res: SimResult, spec: AdversarySpec) -> RunRecord:
    honest = res.honest_nodes()
    decisions = {p: decision_label(node.result) for p, node in honest.items()}
    decided = {p: v for p, v in decisions.items() if v is not None}
    accused_by = {p: sorted(node.accused()) for p, node in honest.items()}
    union = sorted(set().union(*accused_by.values())) if accused_by else []
    times = [node.decided_at for node in honest.values() if node.decided_at is not None]
    record = RunRecord(
        scenario=scenario.name, seed=seed, protocol=scenario.protocol,
        n=scenario.n, t=scenario.t, d=scenario.d, q=scenario.q, h0=scenario.h0,
        attack=Attack(scenario.attack).value, timeouts=scenario.timeouts,
        decided=len(decided), honest=len(honest), branches=len(set(decided.values())),
        accused=union, min_accused=min((len(v) for v in accused_by.values()), default=0),
        exclusions=sum(len(node.committee.local_deceitful) for node in honest.values()),
        messages=res.messages, messages_post_gst=res.messages_post_gst,
        last_decision_ms=max(times) if times else None,
        delay_ratio=res.delay_ratio(), horizon_hit=res.horizon_hit,
        decisions=decisions, accused_by=accused_by, trace=res.trace,
        confirmed=sum(1 for node in honest.values() if node.confirmed_at is not None),
    )
    source_honest = spec.roles.get(scenario.source) == Role.HONEST
    return assess(record, scenario.protocol, source_honest, scenario.alpha)
