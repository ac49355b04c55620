# test_node.py

from dataclasses import replace

import pytest

from aabc import TimeoutPolicy
from adversary import garble
from committee import Committee
from node import Node
from signing import Certificate, InstanceId, Kind, Phase, Pki, SignedMessage, make_scheme, sign


@pytest.fixture
def net():
    pki, keys = Pki.generate(make_scheme("keyed-hash"), range(4), seed=11)
    return pki, keys


def make_node(net, pid=0, blind=frozenset()):
    pki, keys = net
    node = Node(pid, keys[pid], pki, Committee.create(range(4), 3), TimeoutPolicy(100.0), 4, blind=blind)
    node.open(InstanceId(0), protocol="aabc")
    return node


def est(net, signer, bit):
    pki, keys = net
    return sign(pki.scheme, keys[signer], SignedMessage(
        kind=Kind.EST, instance=InstanceId(0, 0), round=1, phase=Phase.ABV,
        payload=bytes([bit]), signer=signer))


def test_emitted_messages_are_signed(net):
    node = make_node(net)
    node.start(1, 0.0)
    out = node.take_outbox()
    assert [m.kind for m in out] == [Kind.EST]
    assert net[0].verify(out[0])
    assert node.take_outbox() == []


def test_bad_signature_rejected(net):
    node = make_node(net)
    node.start(1, 0.0)
    node.receive(garble(est(net, 2, 1)), 1.0)
    assert node.rejected == 1


def test_conflicting_votes_exclude_and_gossip(net):
    node = make_node(net)
    node.start(1, 0.0)
    node.take_outbox()
    node.receive(est(net, 3, 0), 1.0)
    node.receive(est(net, 3, 1), 2.0)
    assert node.accused() == {3}
    assert node.committee.h == 2
    assert node.exclusion_log == [(2.0, [3])]
    gossip = [m for m in node.take_outbox() if m.kind == Kind.POF_LIST]
    assert len(gossip) == 1
    assert len(gossip[0].certificate) == 2


def test_pof_gossip_is_absorbed(net):
    a, b = make_node(net, 0), make_node(net, 1)
    a.start(1, 0.0)
    b.start(1, 0.0)
    a.receive(est(net, 3, 0), 1.0)
    a.receive(est(net, 3, 1), 1.0)
    gossip = [m for m in a.take_outbox() if m.kind == Kind.POF_LIST]
    b.receive(gossip[0], 2.0)
    assert b.accused() == {3}


def test_blind_ids_are_not_accused(net):
    node = make_node(net, blind=frozenset({3}))
    node.start(1, 0.0)
    node.receive(est(net, 3, 0), 1.0)
    node.receive(est(net, 3, 1), 1.0)
    assert node.accused() == set()


def test_duplicate_delivery_is_handled_once(net):
    node = make_node(net)
    node.start(1, 0.0)
    m = est(net, 2, 1)
    node.receive(m, 1.0)
    node.receive(m, 1.5)
    assert node.pki.verifications <= 2
    assert node.rejected == 0


def test_forged_nested_message_rejected(net):
    node = make_node(net)
    node.start(1, 0.0)
    inner = replace(est(net, 2, 1), payload=b"\x00")
    pki, keys = net
    outer = sign(pki.scheme, keys[1], SignedMessage(
        kind=Kind.BVREADY, instance=InstanceId(0, 0), round=1, phase=Phase.ABV,
        payload=b"\x00", signer=1, certificate=Certificate(1, b"\x00", (inner,))))
    node.receive(outer, 1.0)
    assert node.rejected == 1


def test_fresh_pofs_reach_the_callback(net):
    node = make_node(net)
    seen = []
    node.on_pofs = lambda n, pofs, now: seen.append((n.pid, [p.accused for p in pofs], now))
    node.start(1, 0.0)
    node.receive(est(net, 3, 0), 1.0)
    node.receive(est(net, 3, 1), 2.0)
    node.receive(est(net, 3, 1), 3.0)
    assert seen == [(0, [3], 2.0)]
