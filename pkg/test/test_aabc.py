# test_aabc.py

import itertools

import pytest

import simnet
from aabc import (
    BinaryConsensus,
    ProtocolError,
    TimeoutPolicy,
    comp_vals,
    decode_bit,
    decode_bits,
    encode_bits,
    relay_threshold,
)
from scenario import from_dict
from signing import Certificate, InstanceId, Kind, Phase, SignedMessage

INST = InstanceId(0, 0)


def msg(kind, signer, payload, rnd=1, phase=Phase.ABV, cert=None):
    return SignedMessage(kind=kind, instance=INST, round=rnd, phase=phase,
                         payload=payload, signer=signer, certificate=cert)


def fresh(host):
    return BinaryConsensus(host, INST, host.pid, TimeoutPolicy(100.0))


def test_bits_codec():
    assert decode_bits(encode_bits({0, 1})) == frozenset({0, 1})
    assert decode_bits(b"\x07") is None
    assert decode_bit(b"\x02") is None
    assert decode_bit(b"\x01") == 1


def test_relay_threshold():
    assert relay_threshold(4, 0) == 2
    assert relay_threshold(3, 0) == 2
    assert relay_threshold(4, 5) == 1


def test_backoff_schedule():
    assert TimeoutPolicy(100.0).timeout(3) == 100.0
    assert TimeoutPolicy(100.0, "backoff").timeout(2) == pytest.approx(225.0)


@pytest.mark.parametrize("echoes, bin_vals, aux, expected", [
    ([{1}, {1}, {1}], {1}, {1}, {1}),
    ([{0}, {1}, {1}], {0, 1}, {1}, {0, 1}),
    ([{1}, {1}], {1}, {1}, set()),
])
def test_comp_vals(echoes, bin_vals, aux, expected):
    pairs = [(i, frozenset(b)) for i, b in enumerate(echoes)]
    assert comp_vals(pairs, frozenset(bin_vals), frozenset(aux), 3) == frozenset(expected)


def test_double_start(host):
    bc = fresh(host)
    bc.propose(1, 0.0)
    with pytest.raises(ProtocolError):
        bc.propose(1, 0.0)


def test_non_binary_proposal(host):
    with pytest.raises(ValueError):
        fresh(host).propose(2, 0.0)


def test_relay_then_deliver_with_bv_certificate(host):
    bc = fresh(host)
    bc.propose(0, 0.0)
    for signer in (1, 2):
        bc.on_message(msg(Kind.BVECHO, signer, b"\x01"), 1.0)
    assert [m.payload for m in host.sent if m.kind == Kind.BVECHO] == [b"\x01"]
    bc.on_message(msg(Kind.BVECHO, 3, b"\x01"), 2.0)
    readies = [m for m in host.sent if m.kind == Kind.BVREADY]
    assert len(readies) == 1
    assert readies[0].payload == b"\x01"
    assert len(readies[0].certificate) == 3
    assert 1 in bc.bin_vals(1)


def test_single_bvready_delivers(host):
    bc = fresh(host)
    bc.propose(1, 0.0)
    support = tuple(msg(Kind.BVECHO, s, b"\x00") for s in (1, 2, 3))
    bc.on_message(msg(Kind.BVREADY, 1, b"\x00", cert=Certificate(1, b"\x00", support)), 1.0)
    assert 0 in bc.bin_vals(1)


def test_bvready_with_short_certificate_is_dropped(host):
    bc = fresh(host)
    bc.propose(1, 0.0)
    support = tuple(msg(Kind.BVECHO, s, b"\x00") for s in (1, 2))
    bc.on_message(msg(Kind.BVREADY, 1, b"\x00", cert=Certificate(1, b"\x00", support)), 1.0)
    assert 0 not in bc.bin_vals(1)
    assert bc.uncertified == 1


def test_round_two_certificate_rule(host):
    bc = fresh(host)
    bc.propose(1, 0.0)
    bc.on_message(msg(Kind.EST, 2, b"\x00", rnd=2), 1.0)
    assert bc.uncertified == 1
    bc.on_message(msg(Kind.EST, 2, b"\x01", rnd=2), 1.0)
    assert bc.uncertified == 1


def test_decision_certificate_is_adopted(host):
    bc = fresh(host)
    echoes = tuple(msg(Kind.ECHO, s, encode_bits({1}), phase=Phase.AUX) for s in (1, 2, 3))
    decision = msg(Kind.DECISION, 1, b"\x01", phase=Phase.DECIDE, cert=Certificate(1, b"\x01", echoes))
    bc.on_message(decision, 5.0)
    assert bc.decided == 1
    assert bc.decided_at == 5.0
    assert host.kinds()[-1] == Kind.DECISION


def test_decision_with_wrong_parity_is_rejected(host):
    bc = fresh(host)
    echoes = tuple(msg(Kind.ECHO, s, encode_bits({0}), phase=Phase.AUX) for s in (1, 2, 3))
    decision = msg(Kind.DECISION, 1, b"\x00", phase=Phase.DECIDE, cert=Certificate(1, b"\x00", echoes))
    bc.on_message(decision, 5.0)
    assert bc.decided is None
    assert bc.uncertified == 1


def _aabc(proposals, **extra):
    raw = {"protocol": "aabc", "n": len(proposals), "t": 0, "d": 0, "q": 0, "proposals": proposals}
    raw.update(extra)
    return raw


@pytest.mark.parametrize("bit, rnd", [(1, 1), (0, 2)])
def test_unanimous_decides_by_parity(simulate, bit, rnd):
    sc, res = simulate(_aabc([bit] * 4))
    for node in res.honest_nodes().values():
        bc = node.instance.bc[0]
        assert bc.decided == bit
        assert bc.decision_round == rnd


def test_split_proposals_terminate_quickly(simulate):
    sc, res = simulate(_aabc([0, 0, 1, 1]))
    rounds = {node.instance.bc[0].decision_round for node in res.honest_nodes().values()}
    values = {node.instance.bc[0].decided for node in res.honest_nodes().values()}
    assert len(values) == 1
    assert max(rounds) <= 3


def test_strong_validity_exhaustive():
    for proposals in itertools.product((0, 1), repeat=4):
        sc = from_dict(_aabc(list(proposals), delay={"kind": "uniform", "lo_ms": 0, "hi_ms": 50}))
        rec = simnet.run(sc, seed=3)
        assert rec.status == "ok", rec.note
        assert {int(v) for v in rec.decisions.values()} <= set(proposals)


def test_deceitful_vote_splitting_is_caught():
    sc = from_dict({
        "protocol": "aabc", "n": 4, "t": 0, "d": 1, "q": 1,
        "attack": "binary-consensus-attack", "partitions": [[2], [3]],
        "proposals": [0, 0, 0, 1],
    })
    rec = simnet.run(sc, seed=1)
    assert rec.status == "ok", rec.note
    assert rec.decided == 2
    assert rec.branches == 1
    assert rec.accused_by == {2: [0], 3: [0]}
