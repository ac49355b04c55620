# test_records_handler.py

import json
import os

import pytest

import records_handler

from config import OUT_DIR_ENV, RUN_CSV_HEADERS
from records_handler import (
    error_row,
    load_latency_table,
    out_dir,
    read_all_records,
    write_chain_dump,
    write_json_lines,
    write_run_rows,
    write_table,
)


def test_header_written_once(tmp_path):
    path = tmp_path / "runs.csv"
    write_run_rows(path, [{"scenario": "a", "seed": 1}])
    write_run_rows(path, [{"scenario": "a", "seed": 2}])
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(RUN_CSV_HEADERS)
    assert len(lines) == 3
    rows = read_all_records(path)
    assert [r["seed"] for r in rows] == ["1", "2"]
    assert rows[0]["status"] == "-"


def test_read_missing_file(tmp_path):
    assert read_all_records(tmp_path / "none.csv") == []


def test_error_row():
    row = error_row("split", 7, "basilic", "boom\n  at line 3")
    assert list(row) == RUN_CSV_HEADERS
    assert row["status"] == "error"
    assert row["note"] == "boom at line 3"
    assert row["decided"] == "-"


def test_json_lines_append_and_chain_rewrite(tmp_path):
    path = tmp_path / "out.jsonl"
    write_json_lines(path, [{"b": 1, "a": 2}, b'{"raw":true}'])
    write_json_lines(path, [{"c": 3}])
    assert path.read_text().splitlines() == ['{"a":2,"b":1}', '{"raw":true}', '{"c":3}']
    chain = tmp_path / "chain.jsonl"
    write_chain_dump(chain, [{"index": 0}])
    write_chain_dump(chain, [{"index": 0}, {"index": 1}])
    assert [json.loads(x)["index"] for x in chain.read_text().splitlines()] == [0, 1]


def test_write_table(tmp_path):
    path = tmp_path / "t.csv"
    write_table(path, ["dt", "branches"], [(0, 1), (3, 2)])
    assert path.read_text() == "dt,branches\n0,1\n3,2\n"


def test_out_dir_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_DIR_ENV, str(tmp_path / "env"))
    assert out_dir() == tmp_path / "env"
    assert (tmp_path / "env").is_dir()
    assert out_dir(tmp_path / "flag") == tmp_path / "flag"


def test_latency_table_bad_value(tmp_path):
    path = tmp_path / "lat.csv"
    path.write_text("from,to,ms\na,b,fast\n")
    with pytest.raises(ValueError, match="line 2"):
        load_latency_table(path)


def test_retried_write_does_not_duplicate_rows(tmp_path, monkeypatch):
    path = tmp_path / "runs.csv"
    write_run_rows(path, [{"scenario": "a", "seed": 1}])
    real = os.replace
    calls = []

    def flaky(src, dst):
        calls.append(src)
        if len(calls) == 1:
            raise OSError("disk hiccup")
        return real(src, dst)

    monkeypatch.setattr(records_handler.os, "replace", flaky)
    write_run_rows(path, [{"scenario": "a", "seed": 2}])
    assert len(calls) == 2
    assert [r["seed"] for r in read_all_records(path)] == ["1", "2"]
    assert sorted(p.name for p in tmp_path.iterdir()) == ["runs.csv"]


def test_failed_write_leaves_file_untouched(tmp_path, monkeypatch):
    path = tmp_path / "runs.csv"
    write_run_rows(path, [{"scenario": "a", "seed": 1}])
    before = path.read_bytes()

    def broken(src, dst):
        raise OSError("read-only")

    monkeypatch.setattr(records_handler.os, "replace", broken)
    with pytest.raises(OSError):
        write_run_rows(path, [{"scenario": "a", "seed": 2}])
    assert path.read_bytes() == before
    assert sorted(p.name for p in tmp_path.iterdir()) == ["runs.csv"]
