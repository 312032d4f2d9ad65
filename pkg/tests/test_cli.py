import json

import pytest

from rphm.cli import main
from rphm.exchange import loads_model
from rphm.vehicle import BUNDLE_FILES


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    out = tmp_path_factory.mktemp("vehicle")
    assert main(["example", "vehicle", "-o", str(out)]) == 0
    return out


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_example_writes_bundle(bundle):
    for name in BUNDLE_FILES + ("vehicle.json",):
        assert (bundle / name).is_file()


def test_derive_merge_round_trip(bundle, tmp_path, capsys):
    b = bundle
    assert main(["derive", "dmatrix", "--dmatrix", str(b / "dmatrix.csv"), "--reliability",
                 str(b / "reliability.csv"), "--tests", str(b / "tests.json"),
                 "-o", str(tmp_path / "diag.json")]) == 0
    assert main(["derive", "faulttree", "--faulttree", str(b / "faulttree.json"), "--reliability",
                 str(b / "reliability.csv"), "--gates", str(b / "gates.json"),
                 "-o", str(tmp_path / "haz.json")]) == 0
    assert main(["merge", "--diagnostic", str(tmp_path / "diag.json"), "--hazard",
                 str(tmp_path / "haz.json"), "--scenarios", str(b / "scenarios.json"),
                 "-o", str(tmp_path / "merged.json")]) == 0
    merged = (tmp_path / "merged.json").read_text()
    assert merged == (b / "vehicle.json").read_text()
    # serialize(parse(x)) == x
    code, out, _ = run(capsys, "merge", "--diagnostic", tmp_path / "diag.json",
                       "--hazard", tmp_path / "haz.json", "--scenarios", b / "scenarios.json")
    assert code == 0 and out == merged
    assert loads_model(merged) is not None


def test_validate(bundle, capsys):
    code, out, _ = run(capsys, "validate", "--model", bundle / "vehicle.json")
    report = json.loads(out)
    assert code == 0 and report["valid"]
    assert report["variables"] == 34 and report["edges"] == 44
    assert report["decisions"] == ["D_AX", "D_PW", "Operation"]


def test_validate_invalid(tmp_path, bundle, capsys):
    doc = json.loads((bundle / "vehicle.json").read_text())
    doc["initial"]["AI"] = ["0.5", "0.4"]
    doc["cims"]["AI"]["matrices"][""][0] = ["-1", "2"]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    code, out, _ = run(capsys, "validate", "--model", bad)
    report = json.loads(out)
    assert code == 1 and not report["valid"]
    assert {v["variable"] for v in report["violations"]} == {"AI"}
    assert len(report["violations"]) >= 2


@pytest.mark.parametrize("argv", [
    ["query"],
    ["validate", "--model", "/nonexistent/model.json"],
    ["frobnicate"],
])
def test_usage_errors(argv, capsys):
    assert run(capsys, *argv)[0] == 2


def test_query_needs_time(bundle, capsys):
    code, _, err = run(capsys, "query", "--model", bundle / "vehicle.json", "--var", "PW1",
                       "--state", "failed")
    assert code == 2 and "--t" in err


def test_scenario_rejects_non_decision(bundle, capsys):
    code, _, _ = run(capsys, "query", "--model", bundle / "vehicle.json", "--var", "PW1",
                     "--state", "failed", "--t", "1", "--scenario", "PW1=ok")
    assert code == 2


def test_domain_error(bundle, tmp_path, capsys):
    ev = tmp_path / "ev.json"
    ev.write_text(json.dumps({"point": [{"var": "NOPE", "state": "x", "t": 1.0}]}))
    code, _, _ = run(capsys, "query", "--model", bundle / "vehicle.json", "--var", "PW1",
                     "--state", "failed", "--t", "1", "--evidence", ev)
    assert code == 1


def test_query_json(bundle, capsys):
    code, out, _ = run(capsys, "query", "--model", bundle / "vehicle.json", "--var", "PW1",
                       "--state", "failed", "--t", "100", "--engine", "exact")
    res = json.loads(out)
    assert code == 0
    assert res["query"] == {"type": "state_prob", "var": "PW1", "state": "failed", "t": 100.0}
    assert 0 < res["value"] < 1
    assert res["scenario"] == {"D_AX": "AX", "D_PW": "redundant", "Operation": "standard"}


def test_occupancy_query(bundle, capsys):
    code, out, _ = run(capsys, "query", "--model", bundle / "vehicle.json", "--type", "occupancy",
                       "--var", "PW1", "--state", "ok", "--horizon", "10", "--engine", "exact")
    assert code == 0 and 9 < json.loads(out)["value"] <= 10


def test_simulate_seed_env(bundle, capsys, monkeypatch):
    monkeypatch.setenv("RPHM_SEED", "7")
    a = run(capsys, "simulate", "--model", bundle / "vehicle.json", "--horizon", "50")[1]
    b = run(capsys, "simulate", "--model", bundle / "vehicle.json", "--horizon", "50", "--seed", "7")[1]
    assert a == b and json.loads(a)["seed"] == 7
    monkeypatch.setenv("RPHM_SEED", "abc")
    assert run(capsys, "simulate", "--model", bundle / "vehicle.json", "--horizon", "5")[0] == 2


def test_evaluate_report(bundle, tmp_path, capsys):
    args = ["evaluate", "--model", bundle / "vehicle.json", "--objectives", bundle / "objectives.json",
            "--horizon", "50", "--table", tmp_path / "t.txt", "--curves", tmp_path / "c.csv",
            "--curve-points", "3"]
    code, out, _ = run(capsys, *args)
    report = json.loads(out)
    assert code == 0
    assert len(report["scenarios"]) == 8
    assert report["pareto_count"] == sum(r["pareto"] for r in report["scenarios"]) >= 1
    assert [o["id"] for o in report["objectives"]] == ["operational_value", "repair_cost",
                                                       "crew_exposure_hours"]
    assert len((tmp_path / "c.csv").read_text().splitlines()) == 9
    assert "operational_value" in (tmp_path / "t.txt").read_text()
    assert run(capsys, *args)[1] == out
