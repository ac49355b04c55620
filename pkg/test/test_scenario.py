# test_scenario.py

import json
from pathlib import Path

import pytest

from adversary import Attack, BenignKind
from basilic import DecisionMode
from scenario import ScenarioError, from_dict, load_scenario

BASE = {"n": 9, "t": 0, "d": 2, "q": 1}


def make(**extra):
    raw = dict(BASE)
    raw.update(extra)
    return from_dict(raw)


def field_of(raw):
    with pytest.raises(ScenarioError) as err:
        from_dict(raw)
    return err.value.field


def test_defaults():
    sc = make()
    assert sc.protocol == "basilic"
    assert sc.h0 == 6
    assert sc.h0_membership == 7
    assert sc.attack == Attack.NONE
    assert sc.mode == DecisionMode.SUPERBLOCK
    assert sc.seeds == [1]
    assert sc.pool_size == 27
    assert sc.profile.dt == 2


def test_presets_and_explicit_thresholds():
    assert make(h0="five-sixths").h0 == 8
    assert make(h0=7, h0_membership=8).h0_membership == 8


@pytest.mark.parametrize("extra, field", [
    ({"colour": "red"}, "colour"),
    ({"protocol": "paxos"}, "protocol"),
    ({"h0": 4}, "h0"),
    ({"h0": "most"}, "h0"),
    ({"attack": "dos"}, "attack"),
    ({"partitions": "half"}, "partitions"),
    ({"benign": "sleepy"}, "benign"),
    ({"delay": {"kind": "pareto"}}, "delay"),
    ({"delta_ms": 0}, "delta_ms"),
    ({"seeds": "5..1"}, "seeds"),
    ({"mode": "max"}, "mode"),
    ({"timeouts": "random"}, "timeouts"),
    ({"signature": "rsa"}, "signature"),
    ({"proposals": ["a"]}, "proposals"),
    ({"source": 9}, "source"),
    ({"deposit": {"gain_cap": 0}}, "deposit"),
    ({"pool": {"honest_fraction": 2}}, "pool"),
    ({"instances": 0}, "instances"),
    ({"alpha": 1}, "alpha"),
    ({"txs_per_batch": -1}, "txs_per_batch"),
])
def test_field_errors(extra, field):
    raw = dict(BASE)
    raw.update(extra)
    assert field_of(raw) == field


def test_missing_profile_count():
    assert field_of({"n": 4, "t": 0, "d": 0}) == "q"


def test_overfull_profile():
    assert field_of({"n": 4, "t": 2, "d": 2, "q": 1}) == "q"


def test_binary_proposals_for_aabc():
    assert field_of({"protocol": "aabc", "n": 4, "t": 0, "d": 0, "q": 0, "proposals": [0, 1, 2, 0]}) == "proposals"


def test_partitions_forms():
    assert make(partitions=3).partition_count == 3
    assert make(partitions=[[5, 4], [8]]).partitions == [[4, 5], [8]]
    assert make(partitions="auto").partitions is None


def test_seed_ranges_and_benign():
    sc = make(seeds="2..4", benign="omit-fraction:0.25")
    assert sc.seeds == [2, 3, 4]
    assert sc.benign.kind == BenignKind.OMIT_FRACTION


def test_sample_trace_table():
    sc = make(delay={"kind": "trace", "table": "sample"})
    assert sc.delay.latency("region1", "region3") == 140.0


def test_latency_table_from_csv(tmp_path):
    path = tmp_path / "lat.csv"
    path.write_text("from,to,ms\neu,us,80\neu,eu,1\nus,us,1\n")
    sc = make(delay={"kind": "trace", "table": str(path)})
    assert sc.delay.latency("us", "eu") == 80.0


def test_latency_table_missing_column(tmp_path):
    path = tmp_path / "lat.csv"
    path.write_text("from,to\neu,us\n")
    raw = dict(BASE, delay={"kind": "trace", "table": str(path)})
    assert field_of(raw) == "delay"


def test_load_scenario_names_from_file(tmp_path):
    path = tmp_path / "split.json"
    path.write_text(json.dumps({"n": 4, "t": 0, "d": 1, "q": 0, "attack": "reliable-broadcast-attack"}))
    sc = load_scenario(path)
    assert sc.name == "split"
    assert sc.attack == Attack.RELIABLE_BROADCAST


def test_load_scenario_errors(tmp_path):
    with pytest.raises(ScenarioError) as err:
        load_scenario(tmp_path / "absent.json")
    assert err.value.field == "<file>"
    bad = tmp_path / "bad.json"
    bad.write_text("{\"n\": 4,")
    with pytest.raises(ScenarioError) as err:
        load_scenario(bad)
    assert "line 1" in err.value.message


@pytest.mark.parametrize("name", ["split", "zlb"])
def test_bundled_scenarios_load(name):
    sc = load_scenario(Path(__file__).parent.parent / "scenarios" / f"{name}.json")
    assert sc.name == name
    assert len(sc.seeds) >= 3
