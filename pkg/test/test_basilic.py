# test_basilic.py

from dataclasses import replace
from fractions import Fraction

import pytest

from aabc import ProtocolError
from basilic import (
    ConfirmStatus,
    DecisionMode,
    EcSequence,
    Outcome,
    Proposal,
    confirm,
    project,
    split_superblock,
    superblock,
    verify_bundle,
)
from signing import InstanceId

ROSTER = (0, 1, 2, 3)
VALUES = {0: b"v0", 2: b"v2"}


def outcome(bits, values, mode=DecisionMode.MIN_INDEX, roster=ROSTER):
    return Outcome(roster=roster, bits=tuple(bits), values=tuple(values), mode=mode)


def test_min_index_projection():
    assert project(DecisionMode.MIN_INDEX, ROSTER, (1, 0, 1, 0), VALUES) == b"v0"


def test_superblock_projection_is_sorted_union():
    block = project(DecisionMode.SUPERBLOCK, ROSTER, (1, 0, 1, 0), {0: b"zz", 2: b"aa"})
    assert split_superblock(block) == [b"aa", b"zz"]
    assert superblock([b"x", b"x"]) == superblock([b"x"])


def test_no_ones_projects_empty():
    assert project(DecisionMode.MIN_INDEX, ROSTER, (0, 0, 0, 0), {}) == b""


def test_empty_proposal_rejected():
    with pytest.raises(ValueError):
        Proposal(b"", 1)


def test_outcome_decode_rejects_mismatch():
    o = outcome((1, 0, 1, 0), [(0, b"v0"), (2, b"v2")])
    assert Outcome.decode(o.encode(), ROSTER) == o
    bad = outcome((1, 0, 0, 0), [(0, b"v0"), (2, b"v2")])
    assert Outcome.decode(bad.encode(), ROSTER) is None
    assert Outcome.decode(b"not json", ROSTER) is None
    assert Outcome.decode(o.encode(), (0, 1, 2)) is None


@pytest.mark.parametrize("alpha, count, conflict, expected", [
    (Fraction(4, 9), 8, False, ConfirmStatus.CONFIRMED),
    (Fraction(4, 9), 7, False, ConfirmStatus.PENDING),
    (Fraction(2, 3), 8, False, ConfirmStatus.PENDING),
    (Fraction(2, 3), 9, False, ConfirmStatus.CONFIRMED),
    (Fraction(4, 9), 5, True, ConfirmStatus.DISAGREEMENT),
])
def test_confirm(alpha, count, conflict, expected):
    assert confirm(9, 6, alpha, count, conflict) == expected


def test_ec_without_disagreement_is_constant():
    seq = EcSequence.from_outcome(outcome((1, 0, 1, 0), [(0, b"v0"), (2, b"v2")]))
    outs = [seq.propose_ec(j) for j in range(4)]
    assert outs == [b"v0"] * 4


def test_ec_value_fork_converges_to_min():
    mine = EcSequence.from_outcome(outcome((1, 0, 0, 0), [(0, b"u")]))
    theirs = EcSequence.from_outcome(outcome((1, 0, 0, 0), [(0, b"v")]))
    assert mine.propose_ec(0) == b"u"
    assert theirs.propose_ec(0) == b"v"
    assert theirs.discover(outcome((1, 0, 0, 0), [(0, b"u")]))
    assert mine.discover(outcome((1, 0, 0, 0), [(0, b"v")]))
    assert mine.propose_ec(1) == theirs.propose_ec(1) == b"u"


def test_ec_bit_fork_converges_to_one():
    full = outcome((1, 1, 0, 0), [(0, b"a"), (1, b"b")], DecisionMode.SUPERBLOCK)
    partial = outcome((0, 1, 0, 0), [(1, b"b")], DecisionMode.SUPERBLOCK)
    a, b = EcSequence.from_outcome(full), EcSequence.from_outcome(partial)
    a.propose_ec(0)
    b.propose_ec(0)
    a.discover(partial)
    b.discover(full)
    assert a.propose_ec(1) == b.propose_ec(1) == superblock([b"a", b"b"])
    assert b.bits[0] == 1


def test_ec_dedups_and_orders_epochs():
    o = outcome((1, 0, 0, 0), [(0, b"u")])
    seq = EcSequence.from_outcome(o)
    assert not seq.discover(o)
    with pytest.raises(ProtocolError):
        seq.propose_ec(1)


def _basilic(**extra):
    raw = {"protocol": "basilic", "n": 4, "t": 0, "d": 0, "q": 0}
    raw.update(extra)
    return raw


def test_same_proposal_everywhere(simulate):
    sc, res = simulate(_basilic(proposals=["v", "v", "v", "v"]))
    results = [node.result for node in res.honest_nodes().values()]
    assert all(r is not None for r in results)
    assert {r.decided for r in results} == {superblock([b"v"])}


def test_min_index_agreement_with_delays(simulate):
    sc, res = simulate(_basilic(mode="min-index", delay={"kind": "uniform", "lo_ms": 0, "hi_ms": 80}), seed=4)
    decided = {node.result.decided for node in res.honest_nodes().values()}
    assert len(decided) == 1
    assert decided.pop().startswith(b"batch:")


def test_modes_share_the_bit_vector(simulate):
    delay = {"kind": "uniform", "lo_ms": 0, "hi_ms": 60}
    _, a = simulate(_basilic(mode="min-index", delay=delay), seed=9)
    _, b = simulate(_basilic(mode="superblock", delay=delay), seed=9)
    bits_a = {node.result.bits for node in a.honest_nodes().values()}
    bits_b = {node.result.bits for node in b.honest_nodes().values()}
    assert bits_a == bits_b
    assert sum(next(iter(bits_a))) >= 3


def test_bundles_verify_and_forgery_fails(simulate):
    sc, res = simulate(_basilic())
    for pid, node in res.honest_nodes().items():
        got = verify_bundle(node.bundle, InstanceId(0), ROSTER, 3)
        assert got is not None
        assert got.encode() == node.result.encode()
        k, v = node.result.values[0]
        forged = replace(node.result, values=((k, b"forged"),) + node.result.values[1:])
        assert verify_bundle(replace(node.bundle, payload=forged.encode()), InstanceId(0), ROSTER, 3) is None


def test_honest_nodes_confirm_each_other(simulate):
    sc, res = simulate(_basilic())
    for node in res.honest_nodes().values():
        assert node.confirm_status(0) == ConfirmStatus.CONFIRMED
