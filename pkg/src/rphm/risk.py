"""Performance functions, scenario sweeps and Pareto selection."""
from __future__ import annotations

import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from . import inference
from .composition import ScenarioAssignment
from .ctbn import CtbnModel
from .errors import BindingError, CapacityError, ParseError, SpecError
from .exchange import fmt
from .inference import Evidence, QueryResult, Reward
from .sampling import _py_mix

DEFAULT_SCENARIO_CAP = 1024
DIRECTIONS = ("maximize", "minimize")

Literal = tuple[str, str]


@dataclass(frozen=True)
class Impulse:
    """Lump ``value`` charged each time ``var`` enters ``state`` while ``when`` holds."""

    var: str
    state: str
    value: float
    when: tuple[Literal, ...] = ()


@dataclass(frozen=True)
class PerformanceFunction:
    id: str
    clauses: tuple[tuple[tuple[Literal, ...], float], ...] = ()
    impulses: tuple[Impulse, ...] = ()

    def scaled(self, c: float) -> "PerformanceFunction":
        return PerformanceFunction(self.id, tuple((lits, r * c) for lits, r in self.clauses),
                                   tuple(Impulse(i.var, i.state, i.value * c, i.when)
                                         for i in self.impulses))

    def variables(self) -> set[str]:
        out = {v for lits, _ in self.clauses for v, _ in lits}
        for i in self.impulses:
            out.add(i.var)
            out |= {v for v, _ in i.when}
        return out

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"id": self.id, "clauses": [
            {"if": [{"var": v, "state": s} for v, s in lits], "rate": r} for lits, r in self.clauses]}
        if self.impulses:
            d["impulses"] = []
            for i in self.impulses:
                e: dict[str, Any] = {"enter": {"var": i.var, "state": i.state}, "value": i.value}
                if i.when:
                    e["if"] = [{"var": v, "state": s} for v, s in i.when]
                d["impulses"].append(e)
        return d


def _literals(items) -> tuple[Literal, ...]:
    return tuple((str(x["var"]), str(x["state"])) for x in items)


def performance_function_from_dict(d: Mapping[str, Any]) -> PerformanceFunction:
    try:
        clauses = tuple((_literals(c.get("if", [])), float(c["rate"])) for c in d.get("clauses", []))
        impulses = tuple(Impulse(str(i["enter"]["var"]), str(i["enter"]["state"]), float(i["value"]),
                                 _literals(i.get("if", [])))
                         for i in d.get("impulses", []))
        return PerformanceFunction(str(d["id"]), clauses, impulses)
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ParseError(f"malformed performance function: {exc!r}") from None


def performance_functions_from_json(text: str) -> dict[str, PerformanceFunction]:
    """A single function object or a list of them, keyed by id."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"performance functions are not valid JSON: {exc}") from None
    items = data if isinstance(data, list) else [data]
    pfs = [performance_function_from_dict(d) for d in items]
    return {pf.id: pf for pf in pfs}


def check_performance_function(model: CtbnModel, pf: PerformanceFunction) -> None:
    for vid in sorted(pf.variables()):
        if not model.has(vid):
            raise SpecError(f"performance function {pf.id!r} references unknown variable {vid!r}")
    lits = [l for c, _ in pf.clauses for l in c] + [l for i in pf.impulses for l in i.when]
    lits += [(i.var, i.state) for i in pf.impulses]
    for vid, state in lits:
        try:
            model.variable(vid).state_index(state)
        except Exception:
            raise SpecError(f"performance function {pf.id!r}: {vid!r} has no state {state!r}") from None


def _matches(model: CtbnModel | None, literals, joint_state: Mapping[str, Any]) -> bool:
    for vid, state in literals:
        have = joint_state[vid]
        if model is not None:
            var = model.variable(vid)
            if var.state_index(have) != var.state_index(state):
                return False
        elif str(have) != str(state):
            return False
    return True


def performance_rate(pf: PerformanceFunction, joint_state: Mapping[str, Any],
                     model: CtbnModel | None = None) -> float:
    """Rate of the first clause whose literals all hold, else 0.

    Without ``model`` states are compared by name; with it, names and
    indices are interchangeable.
    """
    for lits, rate in pf.clauses:
        if _matches(model, lits, joint_state):
            return rate
    return 0.0


def resolve_decisions(pf: PerformanceFunction, model: CtbnModel,
                      assignment: Mapping[str, str]) -> Reward:
    """Evaluate decision literals against the scenario, leaving a state-only reward.

    Clauses whose decision literals fail are dropped; those that hold lose
    the literal.  First-match order is preserved.
    """
    decisions = set(model.decision_ids)

    def reduce(lits):
        kept = []
        for vid, state in lits:
            if vid in decisions:
                var = model.variable(vid)
                if var.state_index(assignment[vid]) != var.state_index(state):
                    return None
            else:
                kept.append((vid, state))
        return kept

    clauses = []
    for lits, rate in pf.clauses:
        kept = reduce(lits)
        if kept is not None:
            clauses.append((kept, rate))
    impulses = []
    for imp in pf.impulses:
        if imp.var in decisions:
            raise SpecError(f"performance function {pf.id!r}: impulses cannot target decision {imp.var!r}")
        kept = reduce(imp.when)
        if kept is not None:
            impulses.append((imp.var, imp.state, imp.value, kept))
    return Reward(clauses, impulses)


def _assignment(scenario) -> dict[str, str]:
    if isinstance(scenario, ScenarioAssignment):
        return dict(scenario.states)
    return dict(scenario or {})


def expected_performance(model: CtbnModel, scenario, evidence: Evidence | None,
                         pf: PerformanceFunction, horizon: float, engine: str = "exact",
                         samples: int = inference.DEFAULT_SAMPLES, seed: int = inference.DEFAULT_SEED,
                         tol: float = 1e-9, cap: int = 2 ** 20, workers: int = 1) -> QueryResult:
    """Expected accumulated value of ``pf`` over ``[0, horizon]`` under a scenario."""
    check_performance_function(model, pf)
    a = _assignment(scenario)
    missing = [d for d in model.decision_ids if d not in a]
    if missing:
        raise BindingError(f"scenario does not assign decisions {missing}")
    reward = resolve_decisions(pf, model, a)
    return inference.expected_reward(model, a, evidence, reward, horizon, engine, samples,
                                     seed, tol, cap, workers)


def enumerate_scenarios(model: CtbnModel, cap: int = DEFAULT_SCENARIO_CAP) -> list[ScenarioAssignment]:
    """Cartesian product of decision states: sorted ids, declared state order."""
    ids = sorted(model.decision_ids)
    states = [model.variable(d).states for d in ids]
    total = math.prod(len(s) for s in states)
    if total > cap:
        raise CapacityError(f"{total} scenarios exceed the cap of {cap}", total)
    return [ScenarioAssignment(dict(zip(ids, combo))) for combo in itertools.product(*states)]


@dataclass(frozen=True)
class ObjectiveSpec:
    id: str
    pf: str
    direction: str = "maximize"
    threshold: float | None = None

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise SpecError(f"objective {self.id!r}: direction must be maximize or minimize")

    def sign(self) -> float:
        return 1.0 if self.direction == "maximize" else -1.0

    def feasible(self, value: float) -> bool:
        """Threshold is a floor when maximizing and a ceiling when minimizing."""
        if self.threshold is None:
            return True
        return value >= self.threshold if self.direction == "maximize" else value <= self.threshold


def objectives_from_list(items: Sequence[Mapping[str, Any]]) -> list[ObjectiveSpec]:
    try:
        out = []
        for o in items:
            th = o.get("threshold")
            out.append(ObjectiveSpec(str(o["id"]), str(o["pf"]), o.get("direction", "maximize"),
                                     None if th is None else float(th)))
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ParseError(f"malformed objectives: {exc!r}") from None
    ids = [o.id for o in out]
    if len(set(ids)) != len(ids):
        raise ParseError("objective ids must be unique")
    return out


@dataclass
class ScenarioResult:
    assignment: ScenarioAssignment
    values: dict[str, float]
    std_errors: dict[str, float] = field(default_factory=dict)
    feasible: bool = True
    violations: list[str] = field(default_factory=list)
    pareto: bool = False


def _vectors(results: Sequence[ScenarioResult], objectives: Sequence[ObjectiveSpec]) -> np.ndarray:
    try:
        return np.array([[o.sign() * r.values[o.id] for o in objectives] for r in results],
                        dtype=float).reshape(len(results), len(objectives))
    except KeyError as exc:
        raise SpecError(f"result lacks a value for objective {exc.args[0]!r}") from None


def pareto_mask(values: np.ndarray) -> np.ndarray:
    """Non-dominated rows of a maximize-everything value matrix.

    Row j dominates row i when it is >= everywhere and > somewhere, so
    equal rows never dominate each other.
    """
    values = np.asarray(values, dtype=float)
    ge = (values[:, None, :] >= values[None, :, :]).all(axis=2)
    gt = (values[:, None, :] > values[None, :, :]).any(axis=2)
    dominates = ge & gt  # [j, i]: j dominates i
    return ~dominates.any(axis=0)


def pareto_front(results: Sequence[ScenarioResult],
                 objectives: Sequence[ObjectiveSpec]) -> list[ScenarioResult]:
    """Non-dominated results by point estimate, in input order."""
    if not results:
        return []
    keep = pareto_mask(_vectors(results, objectives))
    return [r for r, k in zip(results, keep) if k]


def evaluate_scenarios(model: CtbnModel, objectives: Sequence[ObjectiveSpec],
                       functions: Mapping[str, PerformanceFunction], horizon: float,
                       evidence: Evidence | None = None, engine: str = "auto",
                       samples: int = inference.DEFAULT_SAMPLES, seed: int = inference.DEFAULT_SEED,
                       tol: float = 1e-9, cap: int = 2 ** 20, workers: int = 1,
                       scenario_cap: int = DEFAULT_SCENARIO_CAP) -> list[ScenarioResult]:
    """Score every scenario on every objective.

    Each objective draws its Monte Carlo stream from a seed derived from
    the master seed and the objective's position, shared by all scenarios
    so their comparison uses common random numbers.
    """
    for o in objectives:
        if o.pf not in functions:
            raise SpecError(f"objective {o.id!r} references unknown performance function {o.pf!r}")
    scenarios = enumerate_scenarios(model, scenario_cap)
    seeds = [_py_mix(int(seed) ^ (k + 1)) & 0x7FFFFFFFFFFFFFFF for k in range(len(objectives))]
    jobs = [(s, o, sd) for s in scenarios for o, sd in zip(objectives, seeds)]

    def run(job):
        s, o, sd = job
        return expected_performance(model, s, evidence, functions[o.pf], horizon, engine,
                                    samples, sd, tol, cap, 1)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run, jobs))
    else:
        outcomes = [run(j) for j in jobs]
    results = []
    it = iter(outcomes)
    for s in scenarios:
        r = ScenarioResult(s, {}, {})
        for o in objectives:
            q = next(it)
            r.values[o.id] = q.value
            r.std_errors[o.id] = q.std_error
            if not o.feasible(q.value):
                r.violations.append(o.id)
        r.feasible = not r.violations
        results.append(r)
    return results


def scenario_report(results: Sequence[ScenarioResult], objectives: Sequence[ObjectiveSpec],
                    thresholds: Mapping[str, float] | None = None) -> dict:
    """Filter infeasible rows, flag the Pareto front and order by the first objective.

    ``thresholds`` overrides the thresholds carried by the objectives.
    """
    thresholds = dict(thresholds or {})
    objs = [ObjectiveSpec(o.id, o.pf, o.direction, thresholds.get(o.id, o.threshold))
            for o in objectives]
    rows = []
    for r in results:
        violations = [o.id for o in objs if not o.feasible(r.values[o.id])]
        rows.append(ScenarioResult(r.assignment, dict(r.values), dict(r.std_errors),
                                   not violations, violations))
    feasible = [r for r in rows if r.feasible]
    front = {id(r) for r in pareto_front(feasible, objs)}
    for r in rows:
        r.pareto = id(r) in front
    if objs:
        first = objs[0]
        rows.sort(key=lambda r: (not r.feasible, -first.sign() * r.values[first.id],
                                 r.assignment.label()))
    notes = []
    if not feasible:
        notes.append("no scenario satisfies every threshold")
    return {
        "objectives": [{"id": o.id, "pf": o.pf, "direction": o.direction,
                        "threshold": o.threshold} for o in objs],
        "scenarios": [{
            "assignment": dict(sorted(r.assignment.states.items())),
            "values": {o.id: r.values[o.id] for o in objs},
            "std_errors": {o.id: r.std_errors.get(o.id, 0.0) for o in objs},
            "feasible": r.feasible,
            "violations": r.violations,
            "pareto": r.pareto,
        } for r in rows],
        "feasible_count": len(feasible),
        "pareto_count": sum(r.pareto for r in rows),
        "notes": notes,
    }


def report_table(report: Mapping[str, Any]) -> str:
    """Fixed-width text rendering of :func:`scenario_report` output."""
    objs = [o["id"] for o in report["objectives"]]
    header = ["scenario", *objs, "feasible", "pareto"]
    body = []
    for row in report["scenarios"]:
        label = ",".join(f"{k}={v}" for k, v in row["assignment"].items()) or "(none)"
        cells = [label]
        for o in objs:
            se = row["std_errors"][o]
            cells.append(fmt(row["values"][o]) + (f" +/- {se:.3g}" if se else ""))
        cells += ["yes" if row["feasible"] else "no", "*" if row["pareto"] else ""]
        body.append(cells)
    widths = [max(len(str(c)) for c in col) for col in zip(header, *body)]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()
             for cells in [header, ["-" * w for w in widths], *body]]
    lines += [f"note: {n}" for n in report["notes"]]
    return "\n".join(lines) + "\n"


def risk_curves(model: CtbnModel, hazards: Iterable[tuple[str, str]], horizon: float,
                points: int = 51, scenario_cap: int = DEFAULT_SCENARIO_CAP,
                tol: float = 1e-9, cap: int = 2 ** 20) -> str:
    """Plot-ready CSV of P(hazard = state, t) per scenario on a uniform grid."""
    times = np.linspace(0.0, horizon, points)
    hazards = list(hazards)
    lines = ["scenario,variable,state," + ",".join(f"t={fmt(t)}" for t in times)]
    for s in enumerate_scenarios(model, scenario_cap):
        for vid, state in hazards:
            curve = inference.probability_curve(model, s.states, vid, state, times, tol, cap)
            label = s.label().replace(",", ";")
            lines.append(f"{label},{vid},{state}," + ",".join(fmt(p) for p in curve))
    return "\n".join(lines) + "\n"
