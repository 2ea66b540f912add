"""Contract tests for the stdio runner: exact reply shapes, timeout
self-limit, table round-trip, import allowlist, host isolation."""

import json
import subprocess
import sys
import time

import pytest

from orchestra_sandbox.runner import SandboxRequest, run_sandbox

SHIP_CSV = (
    "name,port,propulsion\n"
    'HMNZS Endeavour,Auckland,"320 bhp diesel, 10 knots (19 km/h)"\n'
    'HMNZS Manawanui,Auckland,"710 bhp diesel, 12.5 knots (23 km/h)"\n'
    'HMNZS Canterbury,Lyttelton,"30,000 shp steam, 29 knots (54 km/h)"\n'
    'HMNZS Wellington,Wellington,"3,540 bhp diesel, 21 knots (39 km/h)"\n'
)

RUNNER = (sys.executable, "-m", "orchestra_sandbox")


def request(code, table_csv="a\n1\n2\n3", timeout_s=5.0):
    return SandboxRequest(table_csv=table_csv, code=code, timeout_s=timeout_s)


def invoke(payload: dict, timeout=30):
    started = time.monotonic()
    proc = subprocess.run(
        list(RUNNER),
        input=json.dumps(payload).encode(),
        capture_output=True,
        timeout=timeout,
    )
    elapsed = time.monotonic() - started
    return proc, elapsed


# --- the three fixed examples, bit-exact shapes --------------------------------


def test_filter_returns_table_shape():
    reply = run_sandbox(
        request(
            "DF = DF[DF['port']=='Auckland'][['name','propulsion']]",
            table_csv=SHIP_CSV,
        )
    ).to_json()
    assert set(reply) == {"status", "kind", "payload_csv"}
    assert reply["status"] == "ok"
    assert reply["kind"] == "table"
    lines = reply["payload_csv"].strip().splitlines()
    assert lines[0] == "name,propulsion"
    assert len(lines) == 1 + 2  # header + the two auckland rows
    assert lines[1].startswith("HMNZS Endeavour")
    assert lines[2].startswith("HMNZS Manawanui")


def test_sum_returns_scalar_shape():
    reply = run_sandbox(request("result = df['a'].astype(int).sum()")).to_json()
    assert reply == {"status": "ok", "kind": "scalar", "payload": "6"}


def test_error_reports_exception_type():
    reply = run_sandbox(request("1/0")).to_json()
    assert set(reply) == {"status", "message"}
    assert reply["status"] == "error"
    assert "ZeroDivisionError" in reply["message"]


# --- round trip ------------------------------------------------------------------


def test_noop_round_trips_table():
    reply = run_sandbox(request("pass", table_csv=SHIP_CSV)).to_json()
    assert reply["status"] == "ok" and reply["kind"] == "table"
    assert reply["payload_csv"] == SHIP_CSV


def test_rebound_df_wins_over_original():
    reply = run_sandbox(request("df = df[df['a'] == '2']")).to_json()
    assert reply["payload_csv"] == "a\n2\n"


def test_result_wins_over_rebound_frames():
    reply = run_sandbox(request("DF = df[0:1]\nresult = 'done'")).to_json()
    assert reply == {"status": "ok", "kind": "scalar", "payload": "done"}


def test_series_becomes_table():
    reply = run_sandbox(request("result = df['a']")).to_json()
    assert reply["kind"] == "table"
    assert reply["payload_csv"] == "a\n1\n2\n3\n"


# --- timeout ---------------------------------------------------------------------


def test_infinite_loop_self_limits_within_budget():
    payload = {"table_csv": "a\n1", "code": "while True: pass", "timeout_s": 1.0}
    proc, elapsed = invoke(payload, timeout=10)
    assert elapsed < 2.0  # timeout + 1 s
    assert proc.returncode == 0
    reply = json.loads(proc.stdout)
    assert reply["status"] == "error"
    assert "timed out" in reply["message"]


def test_sleepy_regex_loop_also_times_out():
    code = "import math\nwhile True:\n    math.sqrt(2)"
    reply = run_sandbox(request(code, timeout_s=0.5)).to_json()
    assert reply["status"] == "error"
    assert "timed out" in reply["message"]


# --- stdio discipline ---------------------------------------------------------------


def test_stdout_is_exactly_one_json_object_even_with_prints():
    payload = {
        "table_csv": "a\n1",
        "code": "print('debugging noise')\nresult = 7",
        "timeout_s": 5,
    }
    proc, _ = invoke(payload)
    assert proc.returncode == 0
    lines = [ln for ln in proc.stdout.decode().splitlines() if ln.strip()]
    assert len(lines) == 1
    assert json.loads(lines[0]) == {"status": "ok", "kind": "scalar", "payload": "7"}
    assert b"debugging noise" in proc.stderr


def test_malformed_request_still_replies_well_formed_error():
    proc = subprocess.run(
        list(RUNNER), input=b"this is not json", capture_output=True, timeout=30
    )
    assert proc.returncode == 0
    reply = json.loads(proc.stdout)
    assert reply["status"] == "error"


def test_error_reply_exits_zero():
    proc, _ = invoke({"table_csv": "a\n1", "code": "raise ValueError('x')", "timeout_s": 5})
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["status"] == "error"


# --- isolation -----------------------------------------------------------------------


def test_import_allowlist_blocks_os():
    reply = run_sandbox(request("import os\nresult = os.getcwd()")).to_json()
    assert reply["status"] == "error"
    assert "not allowed" in reply["message"]


def test_import_allowlist_permits_dataframe_stack():
    # mean([1, 3]) = 2, floor(0.9) = 0, two regex hits -> 4
    code = (
        "import re, math, statistics, numpy\n"
        "result = statistics.mean([1, 3]) + math.floor(0.9) + len(re.findall('a', 'aa'))"
    )
    reply = run_sandbox(request(code)).to_json()
    assert reply == {"status": "ok", "kind": "scalar", "payload": "4"}


def test_open_is_unavailable():
    reply = run_sandbox(request("open('x.txt', 'w')")).to_json()
    assert reply["status"] == "error"
    assert "NameError" in reply["message"]


def test_no_writes_outside_temp_dir(tmp_path):
    sentinel = tmp_path / "sentinel"
    sentinel.mkdir()
    payload = {
        "table_csv": "a\n1",
        # the only write channel left is an allowed module; pandas to_csv
        # with a relative path lands in the runner's own temp dir
        "code": "df.to_csv('escaped.csv')\nresult = 'wrote'",
        "timeout_s": 5,
    }
    proc = subprocess.run(
        list(RUNNER),
        input=json.dumps(payload).encode(),
        capture_output=True,
        cwd=sentinel,
        timeout=30,
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["status"] == "ok"
    assert list(sentinel.iterdir()) == []  # nothing appeared where we launched it


def test_timeout_must_be_positive():
    with pytest.raises(ValueError):
        SandboxRequest.from_json({"table_csv": "a\n1", "code": "pass", "timeout_s": 0})
