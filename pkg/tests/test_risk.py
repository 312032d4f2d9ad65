import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rphm.composition import ScenarioAssignment
from rphm.ctbn import Cim, CtbnModel, Variable, two_state_im
from rphm.errors import CapacityError, SpecError
from rphm.risk import (Impulse, ObjectiveSpec, PerformanceFunction, ScenarioResult,
                       enumerate_scenarios, evaluate_scenarios, expected_performance, pareto_front,
                       performance_function_from_dict, performance_rate, report_table, risk_curves,
                       scenario_report)
from rphm.vehicle import read_bundle_file

LOSS_VALUE = 10 * (1 - math.exp(-0.001 * 500)) / 0.001


def single_hazard(lam=0.001):
    v = Variable("LOV", ("clear", "active"), "hazard")
    return CtbnModel([v], set(), {"LOV": Cim("LOV", (), {(): two_state_im(lam, 0.0)})},
                     {"LOV": np.array([1.0, 0.0])})


PI = PerformanceFunction("pi", ((( ("LOV", "clear"),), 10.0),))


def vehicle_functions():
    doc = json.loads(read_bundle_file("objectives.json"))
    return {d["id"]: performance_function_from_dict(d) for d in doc["performance"]}


def brute_force_front(points, signs):
    """Indices not dominated by any other point (O(n^2) pairwise check)."""
    keep = []
    for i, p in enumerate(points):
        dominated = False
        for j, q in enumerate(points):
            if i == j:
                continue
            ge = all(s * a >= s * b for a, b, s in zip(q, p, signs))
            gt = any(s * a > s * b for a, b, s in zip(q, p, signs))
            if ge and gt:
                dominated = True
                break
        if not dominated:
            keep.append(i)
    return keep


def results_from(points, names=None):
    names = names or [f"s{i}" for i in range(len(points))]
    return [ScenarioResult(ScenarioAssignment({"D": n}), {f"o{k}": v for k, v in enumerate(p)})
            for n, p in zip(names, points)]


def objectives(directions):
    return [ObjectiveSpec(f"o{k}", "pf", d) for k, d in enumerate(directions)]


class TestPerformanceRate:
    def test_operational_standard(self):
        pf = vehicle_functions()["pi_op"]
        assert performance_rate(pf, {"LossOfVehicle": "clear", "Operation": "standard"}) == 10

    def test_vehicle_lost(self):
        pf = vehicle_functions()["pi_op"]
        assert performance_rate(pf, {"LossOfVehicle": "active", "Operation": "standard"}) == 0

    def test_empty_clauses(self):
        assert performance_rate(PerformanceFunction("z"), {"X": "anything"}) == 0

    def test_first_match_wins(self):
        pf = PerformanceFunction("p", (((("A", "1"),), 3.0), ((), 1.0)))
        assert performance_rate(pf, {"A": "1"}) == 3.0
        assert performance_rate(pf, {"A": "0"}) == 1.0

    def test_indices_with_model(self):
        model = single_hazard()
        assert performance_rate(PI, {"LOV": 0}, model) == 10.0

    def test_round_trip(self):
        for pf in vehicle_functions().values():
            assert performance_function_from_dict(pf.to_dict()) == pf


class TestExpectedPerformance:
    def test_closed_form_exact(self):
        r = expected_performance(single_hazard(), {}, None, PI, 500.0)
        assert r.value == pytest.approx(3934.69, abs=0.01)
        assert r.value == pytest.approx(LOSS_VALUE, abs=1e-6)

    def test_zero_rate(self):
        pf = PerformanceFunction("z", (((("LOV", "clear"),), 0.0),))
        assert expected_performance(single_hazard(), {}, None, pf, 500.0).value == 0.0

    def test_closed_form_mc(self):
        r = expected_performance(single_hazard(), {}, None, PI, 500.0, engine="mc")
        assert abs(r.value - LOSS_VALUE) <= 3 * r.std_error

    def test_linearity(self, vehicle):
        scenario = {"Operation": "standard", "D_AX": "AX", "D_PW": "single"}
        pf = vehicle_functions()["crew_exposure"]
        a = expected_performance(vehicle, scenario, None, pf, 200.0).value
        b = expected_performance(vehicle, scenario, None, pf.scaled(3.5), 200.0).value
        assert b == pytest.approx(3.5 * a, rel=1e-12)

    def test_clause_reordering(self, vehicle):
        scenario = {"Operation": "standard", "D_AX": "AX", "D_PW": "single"}
        pf = vehicle_functions()["pi_op"]
        flipped = PerformanceFunction("pi_op", tuple(reversed(pf.clauses)))
        a = expected_performance(vehicle, scenario, None, pf, 100.0).value
        b = expected_performance(vehicle, scenario, None, flipped, 100.0).value
        assert abs(a - b) <= 1e-12 * abs(a)

    def test_impulse_counts_failures(self):
        # expected failures of a two-state fault equal lam * E[time ok]
        lam, mu, h = 0.05, 0.5, 30.0
        v = Variable("F", ("ok", "failed"))
        model = CtbnModel([v], set(), {"F": Cim("F", (), {(): two_state_im(lam, mu)})},
                          {"F": np.array([1.0, 0.0])})
        s = lam + mu
        ok_time = h - lam / s * (h - (1 - math.exp(-s * h)) / s)
        pf = PerformanceFunction("c", (), (Impulse("F", "failed", 100.0),))
        r = expected_performance(model, {}, None, pf, h)
        assert r.value == pytest.approx(100 * lam * ok_time, rel=1e-6)
        mc = expected_performance(model, {}, None, pf, h, engine="mc")
        assert abs(mc.value - r.value) <= 3 * mc.std_error

    def test_decision_conditioned_impulse(self, vehicle):
        pf = vehicle_functions()["repair_cost"]
        ax_only = PerformanceFunction("ax", (), tuple(i for i in pf.impulses if i.var == "AX"))
        base = {"Operation": "standard", "D_PW": "single"}
        a = expected_performance(vehicle, {**base, "D_AX": "AX"}, None, ax_only, 500.0).value
        b = expected_performance(vehicle, {**base, "D_AX": "AXprime"}, None, ax_only, 500.0).value
        # each scenario pays its own repair price on the failure count of its own axle
        count_a = expected_performance(vehicle, {**base, "D_AX": "AX"}, None, PerformanceFunction(
            "n", (), (Impulse("AX", "failed", 1.0),)), 500.0).value
        count_b = expected_performance(vehicle, {**base, "D_AX": "AXprime"}, None, PerformanceFunction(
            "n", (), (Impulse("AX", "failed", 1.0),)), 500.0).value
        assert a == pytest.approx(2000 * count_a, rel=1e-12)
        assert b == pytest.approx(2500 * count_b, rel=1e-12)

    def test_unknown_variable(self):
        pf = PerformanceFunction("p", (((("NOPE", "1"),), 1.0),))
        with pytest.raises(SpecError):
            expected_performance(single_hazard(), {}, None, pf, 10.0)


class TestEnumerate:
    def test_no_decisions(self):
        assert enumerate_scenarios(single_hazard()) == [ScenarioAssignment({})]

    def test_vehicle_order(self, vehicle):
        labels = [s.label() for s in enumerate_scenarios(vehicle)]
        assert len(labels) == 8
        assert labels[:3] == ["D_AX=AX,D_PW=redundant,Operation=standard",
                              "D_AX=AX,D_PW=redundant,Operation=conservative",
                              "D_AX=AX,D_PW=single,Operation=standard"]

    def test_operation_only(self, vehicle):
        sub = vehicle.subset({"CO", "Operation"})
        assert [s.states for s in enumerate_scenarios(sub)] == [
            {"Operation": "standard"}, {"Operation": "conservative"}]

    def test_two_decisions(self, vehicle):
        sub = vehicle.subset({"CO", "Operation", "AX", "D_AX"})
        assert len(enumerate_scenarios(sub)) == 4

    def test_cap(self, vehicle):
        with pytest.raises(CapacityError):
            enumerate_scenarios(vehicle, cap=4)


class TestPareto:
    def test_worked_example(self):
        pts = [(10, 5), (8, 8), (6, 9), (9, 4)]
        front = pareto_front(results_from(pts), objectives(["maximize", "maximize"]))
        assert [tuple(r.values.values()) for r in front] == [(10, 5), (8, 8), (6, 9)]

    def test_single(self):
        res = results_from([(1, 2)])
        assert pareto_front(res, objectives(["maximize", "minimize"])) == res

    def test_ties_kept(self):
        res = results_from([(3, 3), (3, 3), (1, 1)])
        assert len(pareto_front(res, objectives(["maximize", "maximize"]))) == 2

    def test_missing_value(self):
        with pytest.raises(SpecError):
            pareto_front(results_from([(1,)]), objectives(["maximize", "maximize"]))

    @given(st.lists(st.lists(st.integers(0, 5), min_size=3, max_size=3), min_size=1, max_size=30),
           st.lists(st.sampled_from(["maximize", "minimize"]), min_size=3, max_size=3))
    def test_matches_brute_force(self, pts, dirs):
        signs = [1 if d == "maximize" else -1 for d in dirs]
        res = results_from(pts)
        front = pareto_front(res, objectives(dirs))
        assert [res.index(r) for r in front] == brute_force_front(pts, signs)

    @given(st.lists(st.lists(st.floats(-10, 10), min_size=2, max_size=2), min_size=1, max_size=20),
           st.integers(0, 1))
    def test_direction_flip_invariance(self, pts, k):
        dirs = ["maximize", "minimize"]
        res = results_from(pts)
        flipped_pts = [[-v if i == k else v for i, v in enumerate(p)] for p in pts]
        flipped_dirs = list(dirs)
        flipped_dirs[k] = "minimize" if dirs[k] == "maximize" else "maximize"
        res2 = results_from(flipped_pts)
        a = [res.index(r) for r in pareto_front(res, objectives(dirs))]
        b = [res2.index(r) for r in pareto_front(res2, objectives(flipped_dirs))]
        assert a == b


class TestReport:
    def test_threshold_excludes_all(self):
        res = results_from([(1, 2), (2, 1)])
        report = scenario_report(res, objectives(["maximize", "maximize"]), {"o0": 100})
        assert report["feasible_count"] == 0 and report["pareto_count"] == 0
        assert report["notes"] == ["no scenario satisfies every threshold"]
        assert "note: no scenario" in report_table(report)

    def test_one_dominating(self):
        res = results_from([(5, 5), (1, 1), (2, 4)])
        report = scenario_report(res, objectives(["maximize", "maximize"]))
        assert report["pareto_count"] == 1
        assert report["scenarios"][0]["values"] == {"o0": 5, "o1": 5}

    def test_minimize_threshold_is_ceiling(self):
        res = results_from([(1.0,), (3.0,)])
        report = scenario_report(res, [ObjectiveSpec("o0", "pf", "minimize", 2.0)])
        assert [r["feasible"] for r in report["scenarios"]] == [True, False]

    def test_axle_design_sweep(self, vehicle):
        sub = vehicle.subset({"AX", "D_AX", "LossOfChassis", "BR", "SU", "WT"})
        pfs = {"avail": PerformanceFunction("avail", (((("LossOfChassis", "clear"),), 1.0),)),
               "cost": PerformanceFunction("cost", (), (Impulse("AX", "failed", 2000.0, (("D_AX", "AX"),)),
                                                        Impulse("AX", "failed", 2500.0, (("D_AX", "AXprime"),))))}
        objs = [ObjectiveSpec("availability", "avail", "maximize"),
                ObjectiveSpec("repair_cost", "cost", "minimize")]
        results = evaluate_scenarios(sub, objs, pfs, 500.0, engine="exact")
        report = scenario_report(results, objs)
        assert {r["assignment"]["D_AX"] for r in report["scenarios"]} == {"AX", "AXprime"}
        assert report["pareto_count"] >= 1
        assert all(isinstance(r["pareto"], bool) for r in report["scenarios"])

    def test_risk_curves_csv(self, vehicle):
        sub = vehicle.subset({"PW1", "PW2", "LossOfPower", "D_PW"})
        text = risk_curves(sub, [("LossOfPower", "active")], 100.0, points=5)
        lines = text.splitlines()
        assert lines[0] == "scenario,variable,state,t=0,t=25,t=50,t=75,t=100"
        assert len(lines) == 3
        single = [l for l in lines if "single" in l][0].split(",")
        redundant = [l for l in lines if "redundant" in l][0].split(",")
        assert float(single[-1]) > float(redundant[-1])
