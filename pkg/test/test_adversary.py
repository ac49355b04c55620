# test_adversary.py

import numpy as np
import pytest

from adversary import (
    AdversarySpec,
    Attack,
    BenignBehavior,
    BenignKind,
    Role,
    assign_roles,
    benign_step,
    crashed,
    default_partition_count,
    garble,
    split_partitions,
    tag_side,
)
from signing import InstanceId, Kind, Phase, SignedMessage


def spec_for(n, t, d, q, attack=Attack.NONE, partitions=None, benign=None):
    return AdversarySpec(roles=assign_roles(n, t, d, q), attack=attack,
                         partitions=partitions or [], benign=benign or BenignBehavior())


def test_role_layout():
    roles = assign_roles(6, 1, 2, 1)
    assert [roles[p] for p in range(6)] == [
        Role.BYZANTINE, Role.DECEITFUL, Role.DECEITFUL, Role.BENIGN, Role.HONEST, Role.HONEST,
    ]


def test_split_partitions():
    assert split_partitions([8, 4, 5, 6, 7], 2) == [[4, 5, 6], [7, 8]]
    assert split_partitions([4, 5], 9) == [[4], [5]]


def test_partitions_must_be_honest_and_disjoint():
    with pytest.raises(ValueError):
        spec_for(5, 0, 1, 0, partitions=[[0], [1]])
    with pytest.raises(ValueError):
        spec_for(5, 0, 1, 0, partitions=[[1, 2], [2]])


def test_leftover_honest_join_first_partition():
    spec = spec_for(6, 0, 2, 0, Attack.RELIABLE_BROADCAST, partitions=[[3], [5]])
    assert spec.partitions == [[2, 3, 4], [5]]


def test_replicas_per_side():
    spec = spec_for(6, 0, 2, 0, Attack.BINARY_CONSENSUS, partitions=[[2, 3], [4, 5]])
    actors = spec.actors()
    assert (0, 0) in actors and (0, 1) in actors
    assert spec.sides == 2
    quiet = spec_for(6, 0, 2, 0, partitions=[[2, 3], [4, 5]])
    assert quiet.sides == 1


def test_replica_only_reaches_its_side():
    spec = spec_for(6, 0, 2, 0, Attack.BINARY_CONSENSUS, partitions=[[2, 3], [4, 5]])
    reach = spec.recipients((0, 1))
    assert (4, 1) in reach and (5, 1) in reach
    assert (2, 0) not in reach
    assert (1, 1) in reach and (1, 0) not in reach
    honest_reach = spec.recipients((2, 0))
    assert (4, 1) in honest_reach
    assert (0, 0) in honest_reach and (0, 1) not in honest_reach
    assert spec.cross_partition((2, 0), (4, 1))
    assert not spec.cross_partition((2, 0), (3, 0))


def test_reliable_broadcast_attack_forks_every_proposal():
    spec = spec_for(6, 0, 2, 0, Attack.RELIABLE_BROADCAST, partitions=[[2, 3], [4, 5]])
    assert spec.replica_inputs((1, 1), "basilic", b"v") == (b"v|side1", {})
    assert spec.replica_inputs((1, 0), "aarb", b"v", source=0) == (b"v", {})
    assert spec.replica_inputs((0, 1), "aarb", b"v", source=0) == (b"v|side1", {})


def test_binary_consensus_attack_targets():
    spec = spec_for(7, 0, 3, 0, Attack.BINARY_CONSENSUS, partitions=[[3, 4], [5, 6]])
    assert spec.targets() == [0, 1]
    assert spec.replica_inputs((0, 0), "basilic", b"v") == (b"v|side0", {0: 1, 1: 0})
    assert spec.replica_inputs((1, 0), "basilic", b"v") == (None, {0: 1, 1: 0})
    assert spec.replica_inputs((2, 1), "basilic", b"v") == (b"v", {0: 0, 1: 1})
    assert spec.replica_inputs((2, 1), "aabc", 0) == (1, {})


def test_custom_fork():
    spec = spec_for(6, 0, 2, 0, Attack.RELIABLE_BROADCAST, partitions=[[2, 3], [4, 5]])
    proposal, _ = spec.replica_inputs((0, 1), "basilic", b"v", fork=lambda v, s: b"alt%d" % s)
    assert proposal == b"alt1"


def test_tag_side():
    assert tag_side(b"v", 3) == b"v|side3"


def test_garble_breaks_signature():
    msg = SignedMessage(kind=Kind.EST, instance=InstanceId(0, 0), round=1, phase=Phase.ABV,
                        payload=b"\x01", signer=1, signature=b"\x10" * 32)
    assert garble(msg).signature != msg.signature
    assert garble(msg).payload == msg.payload


@pytest.mark.parametrize("text, kind, value", [
    ("crash-at:250", BenignKind.CRASH_AT, 250.0),
    ("omit-fraction:0.3", BenignKind.OMIT_FRACTION, 0.3),
    ("stale", BenignKind.STALE, 0.0),
])
def test_benign_parse(text, kind, value):
    b = BenignBehavior.parse(text)
    assert (b.kind, b.value) == (kind, value)


@pytest.mark.parametrize("text", ["omit-fraction:2", "sleepy"])
def test_benign_parse_rejects(text):
    with pytest.raises(ValueError):
        BenignBehavior.parse(text)


def test_benign_sends():
    msg = SignedMessage(kind=Kind.EST, instance=InstanceId(0, 0), round=1, phase=Phase.ABV,
                        payload=b"\x01", signer=0)
    rng = np.random.default_rng(1)
    crash = spec_for(4, 0, 0, 1, benign=BenignBehavior(BenignKind.CRASH_AT, 50.0))
    assert benign_step(crash, (0, 0), [msg], 60.0, 100.0, rng) == []
    assert crashed(crash, (0, 0), 50.0)
    assert not crashed(crash, (1, 0), 50.0)
    assert len(benign_step(crash, (0, 0), [msg], 10.0, 100.0, rng)) == 3
    stale = spec_for(4, 0, 0, 1, benign=BenignBehavior(BenignKind.STALE))
    assert {lag for _, _, lag in benign_step(stale, (0, 0), [msg], 0.0, 100.0, rng)} == {1000.0}


@pytest.mark.parametrize("honest, branches, expected", [
    (5, None, 5),
    (5, 1, 2),
    (5, 3, 3),
    (1, 3, 1),
])
def test_default_partition_count(honest, branches, expected):
    assert default_partition_count(honest, branches) == expected
