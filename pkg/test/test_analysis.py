# test_analysis.py

from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from analysis import (
    AnalysisError,
    ZeroLossParams,
    alpha_confirm_threshold,
    blockdepth_curve,
    branch_curve,
    conservative_branches,
    flux,
    frontier,
    max_branches,
    max_byzantine,
    min_blockdepth,
)


@pytest.mark.parametrize("n, h, dt, expected", [
    (9, 6, 3, 2),
    (90, 60, 49, 3),
    (90, 60, 44, 2),
    (9, 6, 0, 1),
])
def test_max_branches(n, h, dt, expected):
    assert max_branches(n, h, dt) == expected


def test_max_branches_overwhelmed():
    with pytest.raises(AnalysisError):
        max_branches(9, 6, 6)


@pytest.mark.parametrize("delta, expected", [
    (Fraction(1, 2), 3),
    (Fraction(3, 5), 6),
    (Fraction(16, 25), 14),
    (Fraction(33, 50), 51),
])
def test_conservative_branches(delta, expected):
    assert conservative_branches(delta, Fraction(2, 3)) == expected


@pytest.mark.parametrize("alpha, expected", [
    (Fraction(4, 9), 8),
    (Fraction(2, 3), 9),
    (0, 4),
])
def test_alpha_confirm(alpha, expected):
    assert alpha_confirm_threshold(9, 6, alpha) == expected


def test_flux_sign_around_blockdepth():
    assert flux(3, 0.1, 0.0, 0) == pytest.approx(0.1)
    assert flux(3, 0.1, 0.9, 28) > 0
    assert flux(3, 0.1, 0.9, 27) == pytest.approx(-0.0099, abs=5e-4)


@pytest.mark.parametrize("a, rho, expected", [
    (3, 0.9, 28),
    (6, 0.9, 37),
    (14, 0.9, 46),
    (50, 0.9, 58),
    (51, 0.9, 59),
    (3, 0.55, 5),
])
def test_min_blockdepth(a, rho, expected):
    assert min_blockdepth(a, 0.1, rho) == expected


@given(st.integers(2, 80), st.floats(0.05, 1.0), st.floats(0.1, 0.95))
def test_min_blockdepth_is_smallest_safe(a, b, rho):
    w = min_blockdepth(a, b, rho)
    assert flux(a, b, rho, w) >= 0
    if w > 0:
        assert flux(a, b, rho, w - 1) < 0


def test_params_validation():
    with pytest.raises(AnalysisError):
        ZeroLossParams(a=0, b=0.1, rho=0.5, w=1)
    with pytest.raises(AnalysisError):
        ZeroLossParams(a=2, b=0.1, rho=1.0, w=1)
    with pytest.raises(AnalysisError):
        min_blockdepth(3, 0.1, 1.0)


def test_frontier_contains_known_point():
    rows = frontier(9, 7)
    assert (0, 4, 2) in rows
    assert all(t + d + q <= 9 for t, d, q in rows)


@pytest.mark.parametrize("n", [4, 9, 30, 90])
def test_max_byzantine_at_two_thirds(n):
    h = -(-2 * n // 3)
    t = max_byzantine(n, h)
    assert t == min(2 * h - n - 1, n - h)
    assert 3 * t < n


def test_branch_curve_is_monotone():
    curve = branch_curve(30, 20)
    values = [b for _, b in curve]
    assert values == sorted(values)
    assert curve[0] == (0, 1)


def test_blockdepth_curve_rows():
    rows = blockdepth_curve(Fraction(2, 3), 0.1, [0.9], [Fraction(1, 2), Fraction(3, 5)])
    assert rows == [(Fraction(1, 2), 3, 0.9, 28), (Fraction(3, 5), 6, 0.9, 37)]
