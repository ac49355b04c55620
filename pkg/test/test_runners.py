# test_runners.py

from types import SimpleNamespace

import pytest

import sim_runner
from adversary import Role
from membership import MembershipAction, catch_up
from scenario import from_dict
from signing import InstanceId, Kind, Phase, ProofOfFraud, SignedMessage, sign
from sim_runner import run_batch, run_one
from zlb_runner import ZlbRunner


def test_honest_zlb_chain():
    sc = from_dict({"name": "zlb-honest", "protocol": "zlb", "n": 4, "t": 0, "d": 0, "q": 0,
                    "instances": 2, "txs_per_batch": 2})
    rec = run_one(sc, 1)
    assert rec.status == "ok", rec.note
    assert rec.protocol == "zlb"
    assert rec.membership_changes == 0
    assert rec.decisions == {0: 1, 1: 1}
    assert rec.deposit_flux == 0
    assert [b["index"] for b in rec.chain] == [0, 1]
    assert rec.phases["negative_deposit"] is False


def test_batch_keeps_seed_order():
    sc = from_dict({"protocol": "aabc", "n": 4, "t": 0, "d": 0, "q": 0})
    seen = []
    results = run_batch(sc, [3, 1, 2], workers=3, on_result=lambda r: seen.append(r.seed))
    assert [r.seed for r in results] == [3, 1, 2]
    assert seen == [3, 1, 2]
    assert all(r.status == "ok" for r in results)


def test_failing_seed_becomes_error_row(monkeypatch):
    sc = from_dict({"name": "boom", "protocol": "aabc", "n": 4, "t": 0, "d": 0, "q": 0})

    def explode(scenario, seed):
        if seed == 2:
            raise RuntimeError("simulator blew up")
        return real(scenario, seed)

    real = sim_runner.run_one
    monkeypatch.setattr(sim_runner, "run_one", explode)
    results = run_batch(sc, [1, 2])
    assert [r.status for r in results] == ["ok", "error"]
    assert results[1].record is None
    assert results[1].row["note"] == "simulator blew up"
    assert results[1].row["scenario"] == "boom"


@pytest.mark.parametrize("workers", [1, 2])
def test_parallel_matches_serial(workers):
    sc = from_dict({"protocol": "basilic", "n": 4, "t": 0, "d": 0, "q": 1,
                    "delay": {"kind": "uniform", "lo_ms": 0, "hi_ms": 50}})
    rows = [r.row for r in run_batch(sc, [4, 5], workers=workers)]
    assert rows == [run_one(sc, 4).row(), run_one(sc, 5).row()]


def membership_scenario(instances=4):
    return from_dict({
        "name": "zlb-change", "protocol": "zlb", "n": 9, "t": 0, "d": 5, "q": 0,
        "h0": 7, "h0_membership": 7, "attack": "binary-consensus-attack", "instances": instances,
        "delay": {"kind": "uniform", "lo_ms": 0, "hi_ms": 50},
        "cross_delay": {"kind": "uniform", "lo_ms": 1000, "hi_ms": 1000},
        "gst_ms": 20000,
    })


def test_zlb_membership_change_replaces_the_coalition():
    runner = ZlbRunner(membership_scenario(), 1)
    rec = runner.run()
    st = runner.state
    coalition = set(range(5))
    assert rec.status == "ok", rec.note
    assert rec.membership_changes >= 1
    assert set(rec.accused) <= coalition
    assert st.excluded and st.excluded <= coalition

    # every excluded process is backed by a verifiable PoF
    trail = rec.phases["pof_trail"]
    assert sorted(int(p) for p in trail) == sorted(st.excluded)
    assert all(count >= 1 for count in trail.values())
    assert rec.phases["rechecked"] >= 1

    # the committee keeps its size with pool candidates in place of the excluded
    assert len(st.roster) == 9
    assert not set(st.roster) & st.excluded
    joined = set(st.roster) - set(range(9))
    assert len(joined) == len(st.excluded)

    # newcomers caught up with the chain and follow the same ledger
    reference = st.reference()
    for p in joined:
        if st.roles[p] == Role.HONEST:
            assert st.ledgers[p].utxos == reference.utxos
    _, checked = catch_up(st.chain, runner.pki, reference)
    assert checked == len(st.chain)

    # the excluded are slashed; refunds never exceed what the deposit funded
    assert rec.phases["slashed"] > 0
    assert 0 <= rec.phases["refunded"] <= rec.phases["funded"]
    assert "change 1: d+t=5 >= 2h'0-n=5" in rec.out_of_model
    assert rec.decisions[max(rec.decisions)] == 1


def honest_runner(instances=2):
    sc = from_dict({"name": "zlb-honest", "protocol": "zlb", "n": 4, "t": 0, "d": 0, "q": 0,
                    "instances": instances, "txs_per_batch": 1})
    return ZlbRunner(sc, 1)


@pytest.mark.parametrize("stopped, expected", [
    (True, [(0, 0), (0, 1), (1, 0)]),
    (False, [(0, 0), (1, 0)]),
])
def test_only_a_paused_instance_restarts(monkeypatch, stopped, expected):
    runner = honest_runner()
    real = runner._chain_instance
    calls = []

    def chain(index, attempt):
        calls.append((index, attempt))
        complete = real(index, attempt)
        if (index, attempt) == (0, 0):
            for m in runner.state.members.values():
                m.excluding, m.stopped = True, stopped
        return complete

    def change(index):
        for m in runner.state.members.values():
            m.excluding = m.stopped = False

    monkeypatch.setattr(runner, "_chain_instance", chain)
    monkeypatch.setattr(runner, "_membership_change", change)
    rec = runner.run()
    assert calls == expected
    assert rec.phases["restarts"] == (1 if stopped else 0)
    assert rec.phases["last_change"] == 0


def pof_against(runner, accused, rnd=1):
    def one(payload):
        msg = SignedMessage(kind=Kind.ECHO, instance=InstanceId(0, 0), round=rnd,
                            phase=Phase.AUX, payload=payload, signer=accused)
        return sign(runner.pki.scheme, runner.keys[accused], msg)
    return ProofOfFraud.of(one(b"\x00"), one(b"\x01"))


def fake_node(pid, decided_at, log, pofs=()):
    return SimpleNamespace(pid=pid, decided_at=decided_at, exclusion_log=log, pofs=lambda: list(pofs),
                           on_pofs=None)


def test_detection_pauses_only_undecided_instances():
    runner = honest_runner()
    pofs = [pof_against(runner, 0), pof_against(runner, 1)]
    nodes = {
        0: fake_node(0, 50.0, [(80.0, [0]), (90.0, [1])], pofs),
        1: fake_node(1, None, [(20.0, [0, 1])]),
        2: fake_node(2, 100.0, [(10.0, [0, 1])]),
        3: fake_node(3, 5.0, []),
    }
    runner._track_detection(nodes)
    members = runner.state.members
    assert all(members[p].excluding for p in nodes)
    assert [members[p].stopped for p in range(4)] == [False, True, True, False]
    # p3 only learnt of the accused through gossip, so detection time stays unknown
    assert runner.state.detect_fd_ms is None


def test_pofs_during_exclusion_shrink_the_working_committee():
    runner = honest_runner()
    members = runner.state.members[3]
    members.on_pofs([pof_against(runner, 0), pof_against(runner, 1)], runner.pki)
    assert members.working == (2, 3)
    node = fake_node(3, None, [])
    runner._feed_pofs({3: node})
    node.on_pofs(node, [pof_against(runner, 2)], 12.0)
    assert members.working == (3,)
    assert runner.state.working_updates == 1
    node.on_pofs(node, [pof_against(runner, 2)], 13.0)
    assert runner.state.working_updates == 1
    assert members.on_pofs([], runner.pki) == MembershipAction.NONE
