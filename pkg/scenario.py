"""Scenario files: JSON with explicit units, validated field by field."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from adversary import Attack, BenignBehavior
from basilic import DecisionMode
from committee import FaultProfile, ThresholdError, check_threshold
from config import (
    DEFAULT_BLOCKDEPTH_W,
    DEFAULT_DELTA_MS,
    DEFAULT_DEPOSIT_B,
    DEFAULT_GAIN_CAP,
    DEFAULT_GST_MS,
    DEFAULT_H0_PRESET,
    DEFAULT_MEMBERSHIP_H0_PRESET,
    DEFAULT_SIGNATURE,
    H0_PRESETS,
    POOL_HONEST_FRACTION,
    POOL_SIZE_FACTOR,
    SAMPLE_LATENCY_TABLE,
    SIGNATURE_SCHEMES,
    TIMEOUT_SCHEDULES,
    TXS_PER_BATCH,
)
from records_handler import load_latency_table
from simnet import DelayModel
from utils import parse_seeds, preset_threshold

logger = logging.getLogger(__name__)

PROTOCOLS = ("aabc", "aarb", "basilic", "zlb")
KNOWN_FIELDS = {
    "name", "protocol", "n", "t", "d", "q", "h0", "h0_membership", "attack", "partitions",
    "benign", "delay", "cross_delay", "delta_ms", "gst_ms", "seeds", "mode", "timeouts",
    "signature", "proposals", "source", "horizon_ms", "deposit", "pool", "instances",
    "alpha", "trace", "txs_per_batch",
}


class ScenarioError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name
        self.message = message


@dataclass(frozen=True)
class DepositConfig:
    gain_cap: float = DEFAULT_GAIN_CAP
    b: float = DEFAULT_DEPOSIT_B
    w: int = DEFAULT_BLOCKDEPTH_W


@dataclass(frozen=True)
class PoolConfig:
    size: Optional[int] = None
    honest_fraction: float = POOL_HONEST_FRACTION


@dataclass
class Scenario:
    name: str
    protocol: str
    n: int
    t: int
    d: int
    q: int
    h0: int
    h0_membership: int
    attack: Attack = Attack.NONE
    partitions: Optional[list] = None
    partition_count: Optional[int] = None
    benign: BenignBehavior = field(default_factory=BenignBehavior)
    delay: DelayModel = field(default_factory=DelayModel)
    delta_ms: float = DEFAULT_DELTA_MS
    gst_ms: float = DEFAULT_GST_MS
    seeds: list = field(default_factory=lambda: [1])
    mode: DecisionMode = DecisionMode.SUPERBLOCK
    timeouts: str = "const"
    signature: str = DEFAULT_SIGNATURE
    proposals: Optional[list] = None
    source: int = 0
    horizon_ms: Optional[float] = None
    deposit: DepositConfig = field(default_factory=DepositConfig)
    pool: PoolConfig = field(default_factory=PoolConfig)
    instances: int = 1
    alpha: float = 0.0
    trace: bool = False
    txs_per_batch: int = TXS_PER_BATCH

    @property
    def profile(self) -> FaultProfile:
        return FaultProfile(n=self.n, t=self.t, d=self.d, q=self.q)

    @property
    def pool_size(self) -> int:
        return self.pool.size if self.pool.size is not None else POOL_SIZE_FACTOR * self.n


def _threshold(raw, n: int, name: str, default_preset: str) -> int:
    value = raw.get(name, default_preset)
    if isinstance(value, str):
        if value not in H0_PRESETS:
            raise ScenarioError(name, f"unknown preset {value!r} (one of {', '.join(H0_PRESETS)})")
        value = preset_threshold(n, value)
    if not isinstance(value, int) or isinstance(value, bool):
        raise ScenarioError(name, "must be an integer or a preset name")
    try:
        check_threshold(n, value)
    except ThresholdError as e:
        raise ScenarioError(name, str(e)) from None
    return value


def _count(raw: dict, name: str) -> int:
    if name not in raw:
        raise ScenarioError(name, "required (every run states its fault profile)")
    value = raw[name]
    if not isinstance(value, int) or isinstance(value, bool) or value < 0:
        raise ScenarioError(name, "must be a non-negative integer")
    return value


def _number(raw: dict, name: str, default, lo: float = 0.0):
    value = raw.get(name, default)
    if value is None:
        return None
    if not isinstance(value, (int, float)) or isinstance(value, bool) or value < lo:
        raise ScenarioError(name, f"must be a number >= {lo:g}")
    return float(value)


def _with_table(raw):
    """Resolve a trace table given as "sample" or as a CSV path."""
    if not isinstance(raw, dict) or not isinstance(raw.get("table"), str):
        return raw
    table = raw["table"]
    resolved = SAMPLE_LATENCY_TABLE if table == "sample" else load_latency_table(table)
    return {**raw, "table": resolved}


def from_dict(raw: dict, name: str = "scenario") -> Scenario:
    if not isinstance(raw, dict):
        raise ScenarioError("<root>", "scenario must be a JSON object")
    unknown = sorted(set(raw) - KNOWN_FIELDS)
    if unknown:
        raise ScenarioError(unknown[0], "unknown field")
    protocol = raw.get("protocol", "basilic")
    if protocol not in PROTOCOLS:
        raise ScenarioError("protocol", f"one of {', '.join(PROTOCOLS)}")
    n = _count(raw, "n")
    if n < 1:
        raise ScenarioError("n", "must be >= 1")
    t, d, q = _count(raw, "t"), _count(raw, "d"), _count(raw, "q")
    if t + d + q > n:
        raise ScenarioError("q", f"t+d+q={t + d + q} exceeds n={n}")
    h0 = _threshold(raw, n, "h0", DEFAULT_H0_PRESET)
    h0m = _threshold(raw, n, "h0_membership", DEFAULT_MEMBERSHIP_H0_PRESET)

    try:
        attack = Attack(raw.get("attack", "none"))
    except ValueError:
        raise ScenarioError("attack", f"one of {', '.join(a.value for a in Attack)}") from None

    partitions, partition_count = None, None
    parts = raw.get("partitions")
    if isinstance(parts, int) and not isinstance(parts, bool):
        if parts < 1:
            raise ScenarioError("partitions", "count must be >= 1")
        partition_count = parts
    elif isinstance(parts, list):
        if not all(isinstance(g, list) and all(isinstance(p, int) for p in g) for g in parts):
            raise ScenarioError("partitions", "must be a list of id lists")
        partitions = [sorted(g) for g in parts]
    elif parts not in (None, "auto"):
        raise ScenarioError("partitions", "count, list of id lists or \"auto\"")

    try:
        benign = BenignBehavior.parse(raw.get("benign", "crash-at:0"))
    except ValueError as e:
        raise ScenarioError("benign", str(e)) from None

    try:
        delay = DelayModel.from_dict(_with_table(raw.get("delay", {"kind": "uniform", "lo_ms": 0, "hi_ms": 0})),
                                     _with_table(raw.get("cross_delay")))
    except (ValueError, TypeError, KeyError, OSError) as e:
        raise ScenarioError("delay", str(e)) from None

    delta = _number(raw, "delta_ms", DEFAULT_DELTA_MS)
    if delta <= 0:
        raise ScenarioError("delta_ms", "must be positive")
    gst = _number(raw, "gst_ms", DEFAULT_GST_MS)
    horizon = _number(raw, "horizon_ms", None)

    try:
        seeds = parse_seeds(raw.get("seeds", [1]))
    except ValueError as e:
        raise ScenarioError("seeds", str(e)) from None

    try:
        mode = DecisionMode(raw.get("mode", DecisionMode.SUPERBLOCK.value))
    except ValueError:
        raise ScenarioError("mode", "min-index or superblock") from None
    timeouts = raw.get("timeouts", "const")
    if timeouts not in TIMEOUT_SCHEDULES:
        raise ScenarioError("timeouts", f"one of {', '.join(TIMEOUT_SCHEDULES)}")
    signature = raw.get("signature", DEFAULT_SIGNATURE)
    if signature not in SIGNATURE_SCHEMES:
        raise ScenarioError("signature", f"one of {', '.join(SIGNATURE_SCHEMES)}")

    proposals = raw.get("proposals")
    if proposals is not None:
        if not isinstance(proposals, list) or len(proposals) != n:
            raise ScenarioError("proposals", f"need one proposal per process ({n})")
        if protocol == "aabc" and any(p not in (0, 1) for p in proposals):
            raise ScenarioError("proposals", "binary proposals expected for aabc")
    source = raw.get("source", 0)
    if not isinstance(source, int) or not 0 <= source < n:
        raise ScenarioError("source", f"must be a process id in [0, {n})")

    dep = raw.get("deposit", {}) or {}
    try:
        deposit = DepositConfig(
            gain_cap=float(dep.get("gain_cap", DEFAULT_GAIN_CAP)),
            b=float(dep.get("b", DEFAULT_DEPOSIT_B)),
            w=int(dep.get("w", DEFAULT_BLOCKDEPTH_W)),
        )
    except (TypeError, ValueError, AttributeError):
        raise ScenarioError("deposit", "gain_cap, b and w must be numbers") from None
    if deposit.gain_cap <= 0 or deposit.b < 0 or deposit.w < 0:
        raise ScenarioError("deposit", "gain_cap > 0, b >= 0, w >= 0")

    pool_raw = raw.get("pool", {}) or {}
    try:
        pool = PoolConfig(
            size=None if pool_raw.get("size") is None else int(pool_raw["size"]),
            honest_fraction=float(pool_raw.get("honest_fraction", POOL_HONEST_FRACTION)),
        )
    except (TypeError, ValueError, AttributeError):
        raise ScenarioError("pool", "size and honest_fraction must be numbers") from None
    if not 0 <= pool.honest_fraction <= 1 or (pool.size is not None and pool.size < 0):
        raise ScenarioError("pool", "honest_fraction in [0, 1], size >= 0")

    instances = raw.get("instances", 1)
    if not isinstance(instances, int) or instances < 1:
        raise ScenarioError("instances", "must be a positive integer")
    alpha = _number(raw, "alpha", 0.0)
    if alpha >= 1:
        raise ScenarioError("alpha", "must lie in [0, 1)")
    txs = raw.get("txs_per_batch", TXS_PER_BATCH)
    if not isinstance(txs, int) or txs < 0:
        raise ScenarioError("txs_per_batch", "must be a non-negative integer")

    return Scenario(
        name=str(raw.get("name", name)), protocol=protocol, n=n, t=t, d=d, q=q,
        h0=h0, h0_membership=h0m, attack=attack, partitions=partitions,
        partition_count=partition_count, benign=benign, delay=delay, delta_ms=delta,
        gst_ms=gst, seeds=seeds, mode=mode, timeouts=timeouts, signature=signature,
        proposals=proposals, source=source, horizon_ms=horizon, deposit=deposit, pool=pool,
        instances=instances, alpha=alpha, trace=bool(raw.get("trace", False)), txs_per_batch=txs,
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ScenarioError("<file>", f"{path} not found") from None
    except json.JSONDecodeError as e:
        raise ScenarioError("<file>", f"invalid JSON at line {e.lineno}: {e.msg}") from None
    return from_dict(raw, name=path.stem)
