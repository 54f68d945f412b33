import csv
import io
import json
import math
import subprocess
import sys

import pytest

from tube import cli, exact


def run_capture(capsys, *argv):
    code = cli.run(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_constants(capsys):
    code, out, _ = run_capture(capsys, "constants")
    assert code == 0
    (r,) = rows(out)
    assert float(r["c"]) == pytest.approx(math.pi / math.sqrt(6), abs=1e-15)
    assert round(float(r["c"]), 5) == 1.28255
    assert abs(float(r["c_prime"]) - 0.4775) <= 5e-4


def test_duality_check_record(capsys):
    code, out, _ = run_capture(capsys, "duality-check", "--p", "0.7", "--t", "2", "--truncate", "8")
    assert code == 0
    (r,) = rows(out)
    assert list(r)[:7] == ["p", "t", "N", "P_p", "P_q", "residual", "seed"]
    assert float(r["residual"]) <= 1e-8
    assert r["command"] == "duality-check" and r["version"] and r["seed"] == "1"
    # the reported values come from the exact module
    P, Q, res = exact.duality_check(0.7, 2.0, 8, 1e-12)
    assert float(r["P_p"]) == P and float(r["P_q"]) == Q and float(r["residual"]) == res


def test_unknown_command_and_flag(capsys):
    assert run_capture(capsys, "frobnicate")[0] == 2
    code, _, err = run_capture(capsys, "constants", "--frobnicate")
    assert code == 2 and "usage" in err


def test_help_and_version(capsys):
    assert run_capture(capsys, "--help")[0] == 0
    assert run_capture(capsys, "duality-check", "--help")[0] == 0
    code, out, _ = run_capture(capsys, "--version")
    assert code == 0 and "0.1.0" in out


def test_invalid_parameters_are_usage_errors(capsys):
    assert run_capture(capsys, "duality-check", "--p", "1.5", "--t", "2", "--truncate", "8")[0] == 2
    assert run_capture(capsys, "return-prob", "--p", "0.5", "--t", "-1", "--truncate", "8")[0] == 2
    assert run_capture(capsys, "bridge", "--p", "0.5", "--t", "1", "--samples", "2.5")[0] == 2


def test_rejection_cap_exits_one(capsys):
    with pytest.warns(RuntimeWarning, match="acceptance decays"):
        code, _, err = run_capture(
            capsys, "bridge", "--p", "0.5", "--t", "30", "--samples", "5", "--method", "rejection", "--cap", "3",
            "--quiet",
        )
    assert code == 1 and "failed" in err


def test_header_only_csv_for_empty_records():
    assert cli.render([], "csv", ["p", "t", "N"]) == "p,t,N\r\n"
    assert cli.render([], "csv") == "\r\n"
    assert json.loads(cli.render([], "json")) == []


def test_csv_quoting_and_number_format():
    text = cli.render([{"a": 0.1, "b": 'x,"y"', "c": 3, "d": True, "e": 2.0}], "csv")
    assert text.splitlines()[1] == '0.10000000000000001,"x,""y""",3,true,2.0'
    (r,) = rows(text)
    assert float(r["a"]) == 0.1 and r["b"] == 'x,"y"'


def test_json_round_trip_exact():
    recs = [
        {"p": 0.7, "t": 1 / 3, "N": 8, "v": 1e-300, "w": -2.5e17, "ok": False, "s": "dualé"},
        {"p": 0.1 + 0.2, "t": math.pi, "N": 0, "v": 5e-324, "w": 1.0, "ok": True, "s": ""},
    ]
    back = json.loads(cli.render(recs, "json"))
    assert back == recs
    for a, b in zip(back, recs):
        assert all(type(a[k]) is type(b[k]) for k in a)


def test_json_output_of_command(capsys):
    code, out, _ = run_capture(capsys, "square-sum", "--t", "2", "--truncate", "10", "--format", "json")
    assert code == 0
    (r,) = json.loads(out)
    assert r["command"] == "square-sum" and r["residual"] <= 1e-8


def test_reruns_are_byte_identical(tmp_path):
    outs = []
    for k in range(2):
        path = tmp_path / f"b{k}.csv"
        code = cli.run(["bridge", "--p", "0.7", "--t", "3", "--samples", "50", "--seed", "9",
                        "--per-sample", "--out", str(path), "--quiet"])
        assert code == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1] and len(outs[0]) > 100
    other = tmp_path / "c.csv"
    cli.run(["bridge", "--p", "0.7", "--t", "3", "--samples", "50", "--seed", "10",
             "--per-sample", "--out", str(other), "--quiet"])
    assert other.read_bytes() != outs[0]


def test_unwritable_path(capsys, tmp_path):
    code, _, err = run_capture(capsys, "constants", "--out", str(tmp_path / "missing" / "x.csv"))
    assert code == 1 and "cannot write" in err


def test_partitions_and_stationary(capsys):
    code, out, _ = run_capture(capsys, "partitions", "--n", "500")
    assert code == 0
    r = rows(out)[-1]
    assert int(r["n"]) == 500
    code, out, _ = run_capture(capsys, "stationary", "--p", "0.3", "--truncate", "12")
    assert code == 0
    (r,) = rows(out)
    assert abs(float(r["alpha_product"]) - float(r["alpha_truncated"])) <= 1e-3


def test_progress_goes_to_stderr(capsys):
    code, out, err = run_capture(capsys, "bridge", "--p", "0.7", "--t", "2", "--samples", "20")
    assert code == 0
    assert out.startswith("p,") and all("," in line for line in out.splitlines())


def test_console_script_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "tube.cli", "constants", "--format", "json"],
                         capture_output=True, text=True, check=True)
    assert json.loads(res.stdout)[0]["command"] == "constants"
