# suites.py
"""
Acceptance suites. Each suite returns a list of Check rows; the CLI prints
them and exits 1 if any failed. `quick` shrinks seed and instance counts so
the same code runs inside pytest.
"""
import copy
import logging
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from analysis import (
    AnalysisError,
    alpha_confirm_threshold,
    conservative_branches,
    flux,
    max_branches,
    min_blockdepth,
)
from committee import FaultProfile, consensus_tolerated, detection_threshold, tolerating_thresholds
from config import ATTACK_CROSS_DELAY_MS, DEFAULT_DELTA_MS
from ledger import random_fork, replay_oracle
from scenario import from_dict
from sim_runner import run_batch, run_one
from utils import preset_threshold

logger = logging.getLogger(__name__)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


def _seeds(count: int, first: int = 1) -> list[int]:
    return list(range(first, first + count))


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------

def can_split(m: int, parts: int, least: int) -> bool:
    """Exhaustively: can m honest processes form `parts` groups of at least `least` each?"""
    if parts == 0:
        return m >= 0
    if least <= 0:
        return True
    return any(can_split(m - size, parts - 1, least) for size in range(least, m + 1))


def partition_oracle(n: int, h: int, dt: int) -> int:
    """Largest number of honest groups that each reach h together with the coalition."""
    best = 1
    for parts in range(1, n - dt + 1):
        if can_split(n - dt, parts, h - dt):
            best = parts
    return best


def bounds_suite(quick: bool = False) -> list[Check]:
    mismatches = []
    for n in range(1, 13):
        for t in range(n + 1):
            for d in range(n + 1 - t):
                for q in range(n + 1 - t - d):
                    p = FaultProfile(n=n, t=t, d=d, q=q)
                    if consensus_tolerated(p) != bool(tolerating_thresholds(p)):
                        mismatches.append((n, t, d, q))
    checks = [Check("bound equivalence n<=12", not mismatches,
                    f"{len(mismatches)} mismatching profiles" if mismatches else "all profiles agree")]
    wrong = []
    for n in range(2, 13):
        for h in range(n // 2 + 1, n + 1):
            for dt in range(h):
                if max_branches(n, h, dt) != partition_oracle(n, h, dt):
                    wrong.append((n, h, dt))
    checks.append(Check("branch bound matches partition oracle", not wrong,
                        f"mismatch at {wrong[:3]}" if wrong else "n<=12 exhaustive"))
    a = alpha_confirm_threshold(9, 6, Fraction(4, 9))
    b = alpha_confirm_threshold(9, 6, Fraction(2, 3))
    checks.append(Check("alpha-confirmation n=9 h=6", (a, b) == (8, 9), f"alpha=4/9 -> {a}, alpha=2/3 -> {b}"))
    return checks


def zeroloss_suite(quick: bool = False) -> list[Check]:
    checks = []
    expected = {Fraction(1, 2): 28, Fraction(3, 5): 37, Fraction(16, 25): 46, Fraction(33, 50): 59}
    for delta, want in expected.items():
        a = conservative_branches(delta, Fraction(2, 3))
        w = min_blockdepth(a, 0.1, 0.9)
        flips = flux(a, 0.1, 0.9, w) >= 0 and (w == 0 or flux(a, 0.1, 0.9, w - 1) < 0)
        checks.append(Check(f"blockdepth delta={float(delta):g}", w == want and flips,
                            f"a={a} w={w} (expected {want})"))
    # 58 is quoted for delta=0.66; it holds for a <= 50, and a=51 needs one more block
    checks.append(Check("blockdepth a=50 (quoted 58)", min_blockdepth(50, 0.1, 0.9) == 58,
                        f"a=50 -> {min_blockdepth(50, 0.1, 0.9)}"))
    w = min_blockdepth(3, 0.1, 0.55)
    checks.append(Check("blockdepth rho=0.55 discrepancy", w == 5 and flux(3, 0.1, 0.55, 4) < 0,
                        f"computed w={w}; a quoted 4 leaves g(4) = {flux(3, 0.1, 0.55, 4):.4f} < 0"))
    return checks


# ---------------------------------------------------------------------------
# Simulated suites
# ---------------------------------------------------------------------------

def _tolerated_profiles(n: int, h0: int) -> list[tuple]:
    out = []
    for t in range(n + 1):
        for d in range(n + 1 - t):
            for q in range(n + 1 - t - d):
                if d + t < 2 * h0 - n and q + t <= n - h0:
                    out.append((t, d, q))
    return out


def agreement_suite(quick: bool = False, seeds: int = 200) -> list[Check]:
    seeds = 3 if quick else seeds
    attacks = ["none", "reliable-broadcast-attack", "binary-consensus-attack"]
    checks = []
    for n in (4, 7, 10):
        h0 = preset_threshold(n, "two-thirds")
        profiles = _tolerated_profiles(n, h0)
        failures = []
        for seed in _seeds(seeds):
            rng = np.random.default_rng([seed, n, 5])
            t, d, q = profiles[int(rng.integers(0, len(profiles)))]
            sc = from_dict({
                "name": f"agreement-n{n}", "protocol": "basilic", "n": n, "t": t, "d": d, "q": q,
                "h0": h0, "attack": attacks[seed % 3],
                "delay": {"kind": "uniform", "lo_ms": 0, "hi_ms": 3 * DEFAULT_DELTA_MS},
                "gst_ms": 5 * DEFAULT_DELTA_MS, "benign": "crash-at:0",
            })
            rec = run_one(sc, seed)
            if rec.branches > 1 or rec.decided < rec.honest or rec.status != "ok":
                failures.append(f"seed {seed} ({t},{d},{q}): {rec.note}")
        checks.append(Check(f"agreement n={n}", not failures,
                            failures[0] if failures else f"{seeds} seeds, no disagreement"))
    return checks


def spam_scenario():
    """Four processes, one deceitful spamming both values, one benign crashed."""
    return from_dict({
        "name": "spam", "protocol": "aabc", "n": 4, "t": 0, "d": 1, "q": 1, "h0": 3,
        "attack": "binary-consensus-attack", "partitions": [[2], [3]], "benign": "crash-at:0",
        "proposals": [0, 0, 0, 1],
        "delay": {"kind": "uniform", "lo_ms": 0, "hi_ms": DEFAULT_DELTA_MS},
    })


def accountability_suite(quick: bool = False, seeds: int = 100) -> list[Check]:
    seeds = 3 if quick else seeds
    sc = spam_scenario()
    bad = []
    for res in run_batch(sc, _seeds(seeds)):
        rec = res.record
        if rec is None:
            bad.append(f"seed {res.seed}: {res.error}")
            continue
        each_once = all(v == [0] for v in rec.accused_by.values())
        if rec.decided != rec.honest or rec.exclusions != rec.honest or not each_once:
            bad.append(f"seed {res.seed}: decided {rec.decided}/{rec.honest}, exclusions {rec.exclusions}")
    return [Check("spam scenario terminates after one exclusion", not bad,
                  bad[0] if bad else f"{seeds} seeds")]


def attack_scenario(attack: str, n: int = 10):
    h0 = preset_threshold(n, "two-thirds")
    d = -(-5 * n // 9) - 1
    return from_dict({
        "name": f"{attack}-n{n}", "protocol": "basilic", "n": n, "t": 0, "d": d, "q": 0,
        "h0": h0, "attack": attack, "alpha": d / n,
        "delay": {"kind": "uniform", "lo_ms": 0, "hi_ms": DEFAULT_DELTA_MS / 2},
        "cross_delay": {"kind": "uniform", "lo_ms": ATTACK_CROSS_DELAY_MS, "hi_ms": ATTACK_CROSS_DELAY_MS},
        "gst_ms": 20 * ATTACK_CROSS_DELAY_MS,
    })


def attack_suite(quick: bool = False, seeds: int = 100) -> list[Check]:
    seeds = 2 if quick else seeds
    checks = []
    for attack in ("reliable-broadcast-attack", "binary-consensus-attack"):
        sc = attack_scenario(attack)
        bound = max_branches(sc.n, sc.h0, sc.t + sc.d)
        f_d = detection_threshold(sc.n, sc.h0)
        over, unaccounted, confirmed, forks = [], [], [], 0
        for res in run_batch(sc, _seeds(seeds)):
            rec = res.record
            if rec is None:
                over.append(f"seed {res.seed}: {res.error}")
                continue
            if rec.branches > bound:
                over.append(f"seed {res.seed}: {rec.branches} branches")
            if rec.branches > 1:
                forks += 1
                if rec.min_accused < f_d:
                    unaccounted.append(f"seed {res.seed}: {rec.min_accused} accused")
                if rec.confirmed:
                    confirmed.append(f"seed {res.seed}: fork confirmed at {rec.confirmed} processes")
        checks.append(Check(f"{attack}: branches <= {bound}", not over,
                            over[0] if over else f"{forks}/{seeds} seeds forked"))
        checks.append(Check(f"{attack}: forks leave >= {f_d} accused", not unaccounted,
                            unaccounted[0] if unaccounted else "every fork fully accounted"))
        checks.append(Check(f"{attack}: no fork reaches alpha={sc.alpha:g} confirmation", not confirmed,
                            confirmed[0] if confirmed else f"{forks} forks, none confirmed"))
    return checks


def convergence_suite(quick: bool = False, seeds: int = 10) -> list[Check]:
    seeds = 1 if quick else seeds
    follow = 3 if quick else 100
    sc = from_dict({
        "name": "convergence", "protocol": "zlb", "n": 9, "t": 0, "d": 5, "q": 0,
        "h0": 7, "h0_membership": 7, "attack": "binary-consensus-attack",
        "instances": follow + 4,
        "delay": {"kind": "uniform", "lo_ms": 0, "hi_ms": DEFAULT_DELTA_MS / 2},
        "cross_delay": {"kind": "uniform", "lo_ms": ATTACK_CROSS_DELAY_MS, "hi_ms": ATTACK_CROSS_DELAY_MS},
        "gst_ms": 20 * ATTACK_CROSS_DELAY_MS,
    })
    bad = []
    for res in run_batch(sc, _seeds(seeds)):
        rec = res.record
        if rec is None:
            bad.append(f"seed {res.seed}: {res.error}")
            continue
        last = rec.phases.get("last_change", -1)
        after = [b for i, b in rec.decisions.items() if i > last]
        ratio_ok = all(b <= a for a, b in zip(rec.deceitful_ratio, rec.deceitful_ratio[1:]))
        if rec.membership_changes > 3 or len(after) < follow or any(b > 1 for b in after) or not ratio_ok:
            bad.append(f"seed {res.seed}: {rec.membership_changes} changes, "
                       f"{sum(1 for b in after if b > 1)} forks after the last one")
    return [Check("convergence within 3 membership changes", not bad,
                  bad[0] if bad else f"{seeds} seeds, {follow} agreeing instances each")]


def ledger_suite(quick: bool = False, cases: int = 1000) -> list[Check]:
    cases = 25 if quick else cases
    rng = np.random.default_rng(2024)
    wrong, order = 0, 0
    for _ in range(cases):
        genesis, a, b = random_fork(rng)
        ab, ba = copy.deepcopy(genesis), copy.deepcopy(genesis)
        ab.merge_block(a)
        ab.merge_block(b)
        ba.merge_block(b)
        ba.merge_block(a)
        if ab.snapshot() != ba.snapshot():
            order += 1
        oracle = replay_oracle(genesis, list(a.txs) + list(b.txs))
        mine = (ab.snapshot()[0], ab.snapshot()[2], ab.snapshot()[3])
        if mine != oracle or ab.total_value() != genesis.total_value():
            wrong += 1
    return [
        Check("merge matches replay oracle", wrong == 0, f"{wrong}/{cases} cases differ"),
        Check("merge order-insensitive", order == 0, f"{order}/{cases} cases differ"),
    ]


def complexity_suite(quick: bool = False, seeds: int = 20) -> list[Check]:
    seeds = 2 if quick else seeds
    sizes = (4, 10) if quick else (4, 10, 20, 40)
    means = []
    for n in sizes:
        sc = from_dict({"name": f"complexity-n{n}", "protocol": "aabc", "n": n, "t": 0, "d": 0, "q": 0})
        counts = [res.record.messages_post_gst for res in run_batch(sc, _seeds(seeds)) if res.record]
        means.append(float(np.mean(counts)) if counts else float("nan"))
    slope = float(np.polyfit(np.log(sizes), np.log(means), 1)[0])
    cubic = max(m / n ** 3 for n, m in zip(sizes, means))
    detail = ", ".join(f"n={n}: {m:.0f}" for n, m in zip(sizes, means)) + f"; slope {slope:.2f}"
    checks = [Check("messages bounded by C*n^3", np.isfinite(cubic), f"{detail}; C={cubic:.2f}")]
    if len(sizes) >= 4:
        ratio = means[-1] / means[-2]
        checks.append(Check("n=40 / n=20 ratio in [4, 12]", 4 <= ratio <= 12, f"ratio {ratio:.2f}"))
    return checks


def determinism_suite(quick: bool = False, seeds: int = 5) -> list[Check]:
    seeds = 2 if quick else seeds
    sc = from_dict({
        "name": "determinism", "protocol": "basilic", "n": 4, "t": 0, "d": 1, "q": 0,
        "attack": "binary-consensus-attack",
        "delay": {"kind": "gamma", "shape": 2.5, "scale_ms": 40},
        "gst_ms": 1000,
    })
    differ = []
    for seed in _seeds(seeds):
        one, two = run_one(sc, seed), run_one(sc, seed)
        if one.to_json() != two.to_json() or one.row() != two.row():
            differ.append(seed)
    return [Check("same seed, byte-identical record", not differ,
                  f"seeds {differ} differ" if differ else f"{seeds} seeds")]


SUITES = {
    "bounds": bounds_suite,
    "zeroloss": zeroloss_suite,
    "agreement": agreement_suite,
    "accountability": accountability_suite,
    "attack": attack_suite,
    "convergence": convergence_suite,
    "ledger": ledger_suite,
    "complexity": complexity_suite,
    "determinism": determinism_suite,
}


def run_suite(name: str, quick: bool = False) -> list[Check]:
    if name == "all":
        return [c for fn in SUITES.values() for c in fn(quick=quick)]
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r} (one of {', '.join(SUITES)}, all)")
    try:
        return SUITES[name](quick=quick)
    except AnalysisError as e:
        return [Check(name, False, str(e))]
