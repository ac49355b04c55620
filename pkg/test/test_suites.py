# test_suites.py

import pytest

from suites import can_split, partition_oracle, run_suite


@pytest.mark.parametrize("n, h, dt, expected", [
    (9, 6, 3, 2),
    (9, 6, 0, 1),
    (7, 5, 3, 2),
])
def test_partition_oracle(n, h, dt, expected):
    assert partition_oracle(n, h, dt) == expected


def test_can_split():
    assert can_split(6, 2, 3)
    assert not can_split(5, 2, 3)
    assert can_split(0, 0, 4)


@pytest.mark.parametrize("name", ["zeroloss", "ledger", "determinism", "accountability", "attack", "convergence"])
def test_quick_suites_pass(name):
    checks = run_suite(name, quick=True)
    assert checks
    failed = [c for c in checks if not c.passed]
    assert not failed, failed


def test_unknown_suite():
    with pytest.raises(KeyError):
        run_suite("speed")
