import csv
import json
import math
import random

import pytest
from conftest import random_instance

from drcirp.cli import cli
from drcirp.core_model import AmbiguityCell, Instance

GEN = ["--n", "2", "--T", "2", "--samples", "2000", "--test-periods", "20", "--seed", "1"]


def write_instance(path, inst):
    path.write_text(json.dumps(inst.to_json()))
    return str(path)


@pytest.fixture
def instance_file(tmp_path):
    out = tmp_path / "inst.json"
    assert cli(["generate", *GEN, "--out", str(out), "--traces-out", str(tmp_path / "traces.json")]) == 0
    return out


def test_generate_is_deterministic(tmp_path, instance_file):
    again = tmp_path / "again.json"
    assert cli(["generate", *GEN, "--out", str(again)]) == 0
    assert again.read_bytes() == instance_file.read_bytes()
    traces = json.loads((tmp_path / "traces.json").read_text())
    assert traces["periods"] == 20 and len(traces["demand"]) == 2


def test_solve_and_oracle_agree(tmp_path):
    path = write_instance(tmp_path / "tiny.json", random_instance(random.Random(2), 3, 2))
    sol, ref = tmp_path / "sol.json", tmp_path / "ref.json"
    assert cli(["solve", path, "--policy", "flexible", "--out", str(sol)]) == 0
    assert cli(["oracle", path, "--out", str(ref)]) == 0
    a, b = json.loads(sol.read_text()), json.loads(ref.read_text())
    assert a["status"] == "optimal" and a["gap"] == 0.0
    assert a["objective"] == pytest.approx(b["objective"], rel=1e-6)
    assert set(a["statistics"]) == {"firstLevelNodes", "columns", "ppTime", "secondLevelNodes", "routes",
                                    "routeTime", "replnsh", "replnshTime"}


def test_solve_generates_when_no_instance(tmp_path, capsys):
    assert cli(["solve", *GEN, "--policy", "consistent"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["policy"] == "consistent" and out["patterns"]


def test_simulate(tmp_path, instance_file):
    sol = tmp_path / "sol.json"
    cli(["solve", str(instance_file), "--out", str(sol)])
    rep = tmp_path / "rep.json"
    assert cli(["simulate", str(instance_file), str(sol), "--traces", str(tmp_path / "traces.json"),
                "--out", str(rep)]) == 0
    r = json.loads(rep.read_text())
    assert r["periods"] == 20 and 0.0 <= r["serviceLevel"] <= 1.0
    assert cli(["simulate", str(instance_file), str(sol), "--periods", "50", "--out", str(rep)]) == 0
    assert json.loads(rep.read_text())["periods"] == 50


def test_simulate_trace_mismatch_is_usage_error(tmp_path, instance_file):
    sol = tmp_path / "sol.json"
    cli(["solve", str(instance_file), "--out", str(sol)])
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"periods": 2, "demand": [[1, 2]]}))
    assert cli(["simulate", str(instance_file), str(sol), "--traces", str(bad)]) == 2


def test_worst_dist_csv(tmp_path, instance_file):
    out = tmp_path / "wd.csv"
    assert cli(["worst-dist", str(instance_file), "--retailer", "1", "--start", "1", "--end", "2",
                "--level", "10", "--out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["prob", "turning", "d_1"]
    assert sum(float(r[0]) for r in rows[1:]) == pytest.approx(1.0)
    assert cli(["worst-dist", str(instance_file), "--retailer", "9", "--start", "1", "--end", "1",
                "--level", "3"]) == 2


def test_bench_csv(tmp_path):
    out = tmp_path / "kpi.csv"
    assert cli(["bench", "--n", "2", "--T", "2", "--samples", "2000", "--test-periods", "20",
                "--instances", "2", "--policies", "flexible", "consistent", "--out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["#Retailer", "Policy", "Time (s)", "T.O.%", "Cost", "#Cluster", "Avg I.", "S.L.",
                       "Vehicle Util", "O.%", "Avg O.", "E.T.%", "Avg E.T."]
    assert [r[:2] for r in rows[1:]] == [["2", "flexible"], ["2", "consistent"]]
    assert cli(["bench", "--n", "2"]) == 2


@pytest.mark.parametrize("argv", [
    ["frobnicate"],
    ["solve", "--policy", "weekly"],
    ["solve", "/no/such/file.json"],
    ["solve", *GEN, "--eps1", "1.5"],
])
def test_usage_errors(argv):
    assert cli(argv) == 2


def test_oracle_caps_are_usage_error(tmp_path):
    path = tmp_path / "big.json"
    assert cli(["generate", "--n", "6", "--T", "2", "--samples", "500", "--out", str(path)]) == 0
    assert cli(["oracle", str(path)]) == 2


def test_infeasible_exit_code(tmp_path):
    inst = Instance(1, 1, 1, 5.0, math.inf, [[0, 1], [1, 0]], 1, 4, 1, 10, [[AmbiguityCell(0, 20, 12, 3)]],
                    0.3, 0.1)
    path = write_instance(tmp_path / "inf.json", inst)
    assert cli(["solve", path]) == 3
    assert cli(["oracle", path]) == 3


def test_time_limit_exit_codes(tmp_path, instance_file, capsys):
    assert cli(["solve", str(instance_file), "--time-limit", "0"]) == 0
    captured = capsys.readouterr()
    assert json.loads(captured.out)["status"] == "time-limit" and "gap" in captured.err
    # the initial partition needs two vehicles, so no incumbent exists at the limit
    cells = [AmbiguityCell(0, 30, 20, 3)] * 2
    inst = Instance(2, 1, 1, 45.0, math.inf, [[0, 1, 1], [1, 0, 2], [1, 2, 0]], 1, 4, 1, 10,
                    [[c] for c in cells], 0.3, 0.1)
    path = write_instance(tmp_path / "tight.json", inst)
    assert cli(["solve", path, "--time-limit", "0"]) == 1
