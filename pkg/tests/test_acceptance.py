"""Acceptance suite: one test per criterion, summarized at the end of the run."""
import itertools
import json
import math

import numpy as np
import pytest

from rphm.cli import main
from rphm.composition import ScenarioAssignment, bind_scenario, merge_models
from rphm.ctbn import Cim, CtbnModel, Variable, amalgamate, stationary_distribution, two_state_im
from rphm.diagnostics import (TestParams, derive_dmatrix_structure, make_dmatrix,
                              parse_reliability, test_cim)
from rphm.faulttree import GateParams, prune_fault_tree
from rphm.inference import Evidence, IntervalObservation, PointObservation, query_state_probability
from rphm.markov import transient_distribution
from rphm.risk import (ObjectiveSpec, PerformanceFunction, ScenarioResult, expected_performance,
                       pareto_front, performance_function_from_dict, performance_rate)
from rphm.vehicle import BUNDLE_FILES, build_models, read_bundle_file

from conftest import fault_model, frozen_parent_model, random_fault_tree, two_state_fail_probability

PROBS = (0.01, 0.05, 0.1, 0.3)


def criterion(number, title):
    return pytest.mark.criterion(number, title)


def brute_force_front(points, signs):
    keep = []
    for i, p in enumerate(points):
        if not any(all(s * a >= s * b for a, b, s in zip(q, p, signs))
                   and any(s * a > s * b for a, b, s in zip(q, p, signs))
                   for j, q in enumerate(points) if j != i):
            keep.append(i)
    return keep


@criterion(1, "structure law of derived diagnostic models")
def test_structure_law():
    rng = np.random.default_rng(1)
    for _ in range(100):
        m, n = int(rng.integers(1, 13)), int(rng.integers(1, 13))
        d = (rng.random((m, n)) < rng.random()).astype(int)
        faults, tests = [f"F{i}" for i in range(m)], [f"T{j}" for j in range(n)]
        model = derive_dmatrix_structure(make_dmatrix(faults, tests, d))
        assert len(model.variables) == m + n
        assert len(model.edges) == int(d.sum())
        assert all(u in faults and v in tests for u, v in model.edges)
        assert {(faults[i], tests[j]) for i, j in zip(*np.nonzero(d))} == set(model.edges)


@criterion(2, "two-state transient oracle for every bundled subsystem")
def test_two_state_transient():
    for r in parse_reliability(read_bundle_file("reliability.csv")):
        model = fault_model([(r.failure_rate, r.repair_rate)], [r.id])
        for t in (10.0, 100.0, r.mtbf):
            p = query_state_probability(model, {}, None, r.id, "failed", t, engine="exact").value
            assert abs(p - two_state_fail_probability(r.failure_rate, r.repair_rate, t)) <= 1e-9


@criterion(3, "stationary fail probability of simplified test CIMs")
def test_test_stationary():
    for fa, nd in itertools.product(PROBS, PROBS):
        cim = test_cim(TestParams("T", fa, nd), ["F1", "F2"])
        for a, q in cim.matrices.items():
            expected = 1 - nd if any(a) else fa
            assert abs(stationary_distribution(q)[1] - expected) <= 1e-9


@criterion(4, "per-pair mode with zero pair parameters equals simplified bit-exactly")
def test_per_pair_equivalence():
    for fa, nd in itertools.product(PROBS, PROBS):
        for k in range(1, 5):
            parents = [f"F{i}" for i in range(k)]
            p = TestParams("T", fa, nd)
            a, b = test_cim(p, parents, "per_pair"), test_cim(p, parents, "simplified")
            assert set(a.matrices) == set(b.matrices)
            assert all(np.array_equal(a.matrices[x], b.matrices[x]) for x in a.matrices)


@criterion(5, "gate vertices converge to the Boolean gate value")
def test_gate_convergence():
    rng = np.random.default_rng(5)
    for _ in range(20):
        op = ("and", "or")[int(rng.integers(2))]
        k = int(rng.integers(1, 5))
        lam, mu = rng.uniform(0.05, 3.0, size=2)
        g = GateParams("X", float(lam), float(mu))
        t = 20 / min(lam, mu)
        for a in itertools.product([0, 1], repeat=k):
            target = int(all(a) if op == "and" else any(a))
            model = frozen_parent_model(op, g, a)
            model = model.replace(initial={**model.initial, "X": np.array([float(target), 1.0 - target])})
            p = query_state_probability(model, {}, None, "X", target, t).value
            assert abs(p - 1) <= 1e-3


@criterion(6, "pruning preserves Boolean semantics")
def test_pruning_equivalence():
    rng = np.random.default_rng(6)
    for _ in range(200):
        ft = random_fault_tree(rng, int(rng.integers(1, 13)), int(rng.integers(1, 9)))
        pruned = prune_fault_tree(ft)
        faults = ft.fault_ids
        assert sorted(pruned.fault_ids) == sorted(faults)
        for bits in itertools.product([False, True], repeat=len(faults)):
            leaf = dict(zip(faults, bits))
            assert ft.evaluate(leaf) == pruned.evaluate(leaf)


@criterion(7, "merge fidelity and identity of the original decision state")
def test_merge_fidelity(vehicle):
    diag, hazard, _ = build_models({n: read_bundle_file(n) for n in BUNDLE_FILES})
    merged = merge_models(diag, hazard)
    for src in (diag, hazard):
        for vid, cim in src.cims.items():
            got = merged.cims[vid]
            assert got.parent_ids == cim.parent_ids and set(got.matrices) == set(cim.matrices)
            assert all(np.array_equal(got.matrices[a], cim.matrices[a]) for a in cim.matrices)
    original = {"Operation": "standard", "D_AX": "AX", "D_PW": "redundant"}
    bound = bind_scenario(vehicle, original)
    assert np.array_equal(bound.cims["CO"].matrices[()], merged.cims["CO"].matrices[()])
    for var, t in [("CO", 50.0), ("AX", 400.0), ("LossOfPower", 200.0), ("LossOfVehicle", 300.0),
                   ("LossOfCrew", 120.0), ("T1", 25.0)]:
        a = query_state_probability(merged, {}, None, var, 1, t).value
        b = query_state_probability(vehicle, original, None, var, 1, t).value
        assert abs(a - b) <= 1e-12


@criterion(8, "the single power source severs PW2 from Loss of Power")
def test_edge_severing(vehicle):
    sub = vehicle.subset({"PW1", "PW2", "LossOfPower", "D_PW"})
    bound = bind_scenario(sub, {"D_PW": "single"})
    times = (1.0, 10.0, 100.0, 500.0)
    chain, query = [], []
    for clamp in (None, 0, 1):
        model = bound
        if clamp is not None:
            model = bound.replace(
                cims={**bound.cims, "PW2": Cim("PW2", (), {(): np.zeros((2, 2))})},
                initial={**bound.initial, "PW2": np.eye(2)[clamp]})
        gen = amalgamate(model)  # PW2 stays in the chain, no relevance pruning
        assert "PW2" in gen.var_ids
        mask = gen.literal_mask([("LossOfPower", 1)])
        p0 = gen.initial_distribution(model)
        chain.append([transient_distribution(gen.q, p0, t, tol=1e-15)[mask].sum() for t in times])
        query.append([query_state_probability(model, {}, None, "LossOfPower", 1, t).value
                      for t in times])
    for curves in (np.array(chain), np.array(query)):
        assert np.abs(curves - curves[0]).max() <= 1e-12
    # with both sources a healthy PW2 does hold Loss of Power back
    redundant = bind_scenario(sub, {"D_PW": "redundant"})
    frozen = redundant.replace(cims={**redundant.cims, "PW2": Cim("PW2", (), {(): np.zeros((2, 2))})},
                               initial={**redundant.initial, "PW2": np.eye(2)[0]})
    assert query_state_probability(frozen, {}, None, "LossOfPower", 1, 100.0).value < 0.5 * query[0][2]


def _random_query(rng, vehicle):
    ids = [v for v in vehicle.ids if vehicle.variable(v).kind != "decision"]
    var = ids[int(rng.integers(len(ids)))]
    state = int(rng.integers(2))
    t = float(rng.uniform(5.0, 500.0))
    scenario = {d: vehicle.variable(d).states[int(rng.integers(2))] for d in vehicle.decision_ids}
    items = []
    kind = rng.integers(3)
    if kind == 1:
        test = ["T1", "T2", "T3", "T4", "T5", "T6", "T7", "T8", "T9", "T10"][int(rng.integers(10))]
        items.append(PointObservation(test, "pass", float(rng.uniform(0.0, 50.0))))
    elif kind == 2:
        faults = vehicle.ids_of_kind("fault")
        f = faults[int(rng.integers(len(faults)))]
        items.append(IntervalObservation(f, "ok", 0.0, float(rng.uniform(1.0, 50.0))))
    return var, state, t, scenario, Evidence(items)


@criterion(9, "exact and Monte Carlo engines agree on the vehicle model")
def test_exact_vs_monte_carlo(vehicle):
    rng = np.random.default_rng(9)
    for k in range(20):
        var, state, t, scenario, evidence = _random_query(rng, vehicle)
        exact = query_state_probability(vehicle, scenario, evidence, var, state, t, engine="exact")
        mc = query_state_probability(vehicle, scenario, evidence, var, state, t, engine="mc",
                                     mc_samples=100_000, seed=1000 + k)
        assert abs(exact.value - mc.value) <= max(3 * mc.std_error, 0.01), (var, state, t, scenario)


@criterion(10, "expected performance of the single-hazard model")
def test_performance_oracle():
    lov = Variable("LOV", ("clear", "active"), "hazard")
    model = CtbnModel([lov], set(), {"LOV": Cim("LOV", (), {(): two_state_im(0.001, 0.0)})},
                      {"LOV": np.array([1.0, 0.0])})
    pf = PerformanceFunction("pi", (((("LOV", "clear"),), 10.0),))
    oracle = 10 * (1 - math.exp(-0.001 * 500)) / 0.001
    assert abs(oracle - 3934.69) <= 0.01
    exact = expected_performance(model, {}, None, pf, 500.0, engine="exact")
    assert abs(exact.value - oracle) <= 0.01
    mc = expected_performance(model, {}, None, pf, 500.0, engine="mc", samples=100_000, seed=10)
    assert abs(mc.value - oracle) <= 3 * mc.std_error


@criterion(11, "Pareto front equals brute-force dominance")
def test_pareto_oracle():
    def results(points):
        return [ScenarioResult(ScenarioAssignment({"D": str(i)}), {f"o{k}": v for k, v in enumerate(p)})
                for i, p in enumerate(points)]

    worked = results([(10, 5), (8, 8), (6, 9), (9, 4)])
    objs = [ObjectiveSpec("o0", "pf", "maximize"), ObjectiveSpec("o1", "pf", "maximize")]
    assert [tuple(r.values.values()) for r in pareto_front(worked, objs)] == [(10, 5), (8, 8), (6, 9)]
    rng = np.random.default_rng(11)
    for _ in range(1000):
        n, m = int(rng.integers(1, 40)), int(rng.integers(1, 5))
        points = rng.integers(0, 6, size=(n, m)).tolist()
        dirs = [("maximize", "minimize")[int(rng.integers(2))] for _ in range(m)]
        objs = [ObjectiveSpec(f"o{k}", "pf", d) for k, d in enumerate(dirs)]
        res = results(points)
        signs = [1 if d == "maximize" else -1 for d in dirs]
        assert [res.index(r) for r in pareto_front(res, objs)] == brute_force_front(points, signs)


@criterion(12, "conservative operation lowers hazard probability and value accrual")
def test_directional_scenarios(vehicle):
    base = {"D_AX": "AX", "D_PW": "redundant"}
    p = {op: query_state_probability(vehicle, {**base, "Operation": op}, None, "LossOfVehicle",
                                     "active", 500.0, engine="exact").value
         for op in ("standard", "conservative")}
    assert p["conservative"] < p["standard"]
    doc = json.loads(read_bundle_file("objectives.json"))
    pi = next(performance_function_from_dict(d) for d in doc["performance"] if d["id"] == "pi_op")
    rate = {op: performance_rate(pi, {"LossOfVehicle": "clear", "Operation": op})
            for op in ("standard", "conservative")}
    assert rate["conservative"] < rate["standard"]


@criterion(13, "evaluate is byte-identical across runs with the same seed")
def test_determinism(tmp_path):
    bundle = tmp_path / "bundle"
    assert main(["example", "vehicle", "-o", str(bundle)]) == 0
    outputs = []
    for run in range(2):
        out = tmp_path / f"report{run}.json"
        table = tmp_path / f"table{run}.txt"
        assert main(["evaluate", "--model", str(bundle / "vehicle.json"), "--objectives",
                     str(bundle / "objectives.json"), "--horizon", "500", "--seed", "42",
                     "--table", str(table), "-o", str(out)]) == 0
        outputs.append((out.read_bytes(), table.read_bytes()))
    for run in range(2):
        out = tmp_path / f"mc{run}.json"
        assert main(["evaluate", "--model", str(bundle / "vehicle.json"), "--objectives",
                     str(bundle / "objectives.json"), "--horizon", "100", "--seed", "42",
                     "--engine", "mc", "--samples", "5000", "-o", str(out)]) == 0
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1]
    assert outputs[2] == outputs[3]
    assert json.loads(outputs[0][0])["seed"] == 42
