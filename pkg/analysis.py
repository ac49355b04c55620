"""Closed-form BDB bounds: branches, alpha-confirmation, deposit flux, blockdepth, frontiers."""
from __future__ import annotations

import math
from dataclasses import dataclass

from committee import FaultProfile, threshold_tolerated
from utils import as_fraction


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class ZeroLossParams:
    a: int
    b: float
    rho: float
    w: int

    def __post_init__(self):
        if self.a < 1:
            raise AnalysisError("branch count must be >= 1")
        if self.b < 0:
            raise AnalysisError("deposit factor must be >= 0")
        if not 0 <= self.rho < 1:
            raise AnalysisError("rho must lie in [0, 1)")
        if self.w < 0:
            raise AnalysisError("blockdepth must be >= 0")


def max_branches(n: int, h: int, dt: int) -> int:
    """Most branches a coalition of dt deceitful+Byzantine processes can fork into."""
    if dt >= h:
        raise AnalysisError("agreement threshold overwhelmed")
    return max(1, (n - dt) // (h - dt))


def conservative_branches(delta, h_ratio) -> int:
    """ceil((1 - delta) / (h_ratio - delta)) on exact rationals."""
    delta, h_ratio = as_fraction(delta), as_fraction(h_ratio)
    if delta >= h_ratio:
        raise AnalysisError("agreement threshold overwhelmed")
    return math.ceil((1 - delta) / (h_ratio - delta))


def alpha_confirm_threshold(n: int, h: int, alpha) -> int:
    """
    Smallest certificate count c with c > n - h + alpha*n, capped at n when
    the strict bound cannot be met (then every process must be heard).
    """
    bound = n - h + as_fraction(alpha) * n
    return min(n, math.floor(bound) + 1)


def deposit_flux(p: ZeroLossParams) -> float:
    """g(a, b, rho, w) in units of the per-block gain cap; zero-loss iff >= 0."""
    tail = p.rho ** (p.w + 1)
    return (1 - tail) * p.b - (p.a - 1) * tail


def flux(a: int, b: float, rho: float, w: int) -> float:
    return deposit_flux(ZeroLossParams(a=a, b=b, rho=rho, w=w))


def closed_form_blockdepth(a: int, b: float, rho: float) -> float:
    """Real-valued bound log(c)/log(rho) - 1 with c = b / (a - 1 + b)."""
    if rho >= 1:
        raise AnalysisError("no finite blockdepth")
    if not 0 < rho < 1 or a < 2 or b <= 0:
        raise AnalysisError("need rho in (0,1), a >= 2 and b > 0")
    c = b / (a - 1 + b)
    return math.log(c) / math.log(rho) - 1


def min_blockdepth(a: int, b: float, rho: float) -> int:
    """Smallest integer w with deposit_flux >= 0, checked by integer search."""
    w = max(0, math.ceil(closed_form_blockdepth(a, b, rho)))
    while w > 0 and flux(a, b, rho, w - 1) >= 0:
        w -= 1
    while flux(a, b, rho, w) < 0:
        w += 1
    return w


def frontier(n: int, h: int) -> list[tuple[int, int, int]]:
    """
    Extremal (t, d, q): tolerated at threshold h while incrementing any one
    count breaks safety or liveness.
    """
    def ok(t, d, q):
        if t + d + q > n:
            return False
        return threshold_tolerated(FaultProfile(n=n, t=t, d=d, q=q), h) == (True, True)

    ok(0, 0, 0)  # raises on an out-of-range threshold
    rows = []
    for t in range(n + 1):
        for d in range(n + 1 - t):
            for q in range(n + 1 - t - d):
                if ok(t, d, q) and not ok(t + 1, d, q) and not ok(t, d + 1, q) and not ok(t, d, q + 1):
                    rows.append((t, d, q))
    return rows


def max_byzantine(n: int, h: int) -> int:
    """Largest t tolerated with d = q = 0."""
    return max(0, min(2 * h - n - 1, n - h))


def branch_curve(n: int, h: int) -> list[tuple[int, int]]:
    return [(dt, max_branches(n, h, dt)) for dt in range(h)]


def blockdepth_curve(h_ratio, b: float, rhos, deltas) -> list[tuple]:
    """Rows (delta, a, rho, w) using conservative branch counts."""
    rows = []
    for delta in deltas:
        a = conservative_branches(delta, h_ratio)
        for rho in rhos:
            w = 0 if a < 2 else min_blockdepth(a, b, rho)
            rows.append((delta, a, rho, w))
    return rows


def flux_table(a: int, b: float, rho: float, ws) -> list[tuple[int, float]]:
    return [(w, flux(a, b, rho, w)) for w in ws]
