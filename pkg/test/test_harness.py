# test_harness.py

import json

import pytest

from config import EXIT_OK, EXIT_SCENARIO, EXIT_USAGE, RUN_CSV_HEADERS
from harness_main import main


def test_analyze_blockdepth(capsys):
    assert main(["analyze", "blockdepth", "--a", "3", "--b", "0.1", "--rho", "0.9"]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "28"


def test_analyze_tolerance(capsys):
    assert main(["analyze", "tolerance", "--n", "9", "--t", "1", "--d", "2", "--q", "1"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "consensus tolerated: True" in out


def test_analyze_table_to_csv(tmp_path, capsys):
    path = tmp_path / "branches.csv"
    assert main(["analyze", "branches", "--n", "9", "--h", "6", "--out", str(path)]) == EXIT_OK
    assert path.read_text().splitlines()[0] == "dt,branches"


def test_bad_alpha_is_a_usage_error(capsys):
    assert main(["analyze", "alpha", "--n", "9", "--h", "6", "--alpha", "lots"]) == EXIT_USAGE


def test_usage_errors_exit_64():
    with pytest.raises(SystemExit) as err:
        main(["fly"])
    assert err.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as err:
        main(["analyze", "branches", "--n", "9"])
    assert err.value.code == EXIT_USAGE


def test_bad_scenario_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"n": 4, "t": 0, "d": 0, "q": 0, "attack": "dos"}))
    assert main(["run", "--scenario", str(path), "--out", str(tmp_path)]) == EXIT_SCENARIO
    assert "field 'attack'" in capsys.readouterr().out


def test_bad_seed_override_exits_2(tmp_path):
    path = tmp_path / "ok.json"
    path.write_text(json.dumps({"n": 4, "t": 0, "d": 0, "q": 0}))
    assert main(["run", "--scenario", str(path), "--seeds", "9..2", "--out", str(tmp_path)]) == EXIT_SCENARIO


def test_run_writes_rows_and_trace(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps({"protocol": "aabc", "n": 4, "t": 0, "d": 0, "q": 0}))
    out = tmp_path / "out"
    assert main(["run", "--scenario", str(path), "--seeds", "1..2", "--out", str(out), "--trace"]) == EXIT_OK
    lines = (out / "tiny.csv").read_text().splitlines()
    assert lines[0] == ",".join(RUN_CSV_HEADERS)
    assert len(lines) == 3
    assert len((out / "tiny.jsonl").read_text().splitlines()) == 2
    assert (out / "tiny-seed2.trace.jsonl").exists()
