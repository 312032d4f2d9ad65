"""Command-line interface.

Exit status is 0 on success, 1 when an input is invalid or a domain
operation fails, and 2 on usage errors (bad flags, unreadable files).
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

from . import __version__
from .composition import attach_decisions, decision_specs_from_dict, merge_models
from .ctbn import DEFAULT_STATE_CAP, validate_model
from .diagnostics import build_diagnostic_model, parse_dmatrix, parse_reliability, test_params_from_dict
from .errors import ModelError, ParseError, RphmError
from .exchange import dump_json, dumps_model, loads_model
from .faulttree import build_hazard_model, gate_params_from_dict, parse_fault_tree
from .inference import (DEFAULT_SAMPLES, DEFAULT_SEED, Evidence, expected_occupancy,
                        query_condition_probability, sample_trajectory)
from .risk import (evaluate_scenarios, objectives_from_list, performance_function_from_dict,
                   report_table, risk_curves, scenario_report)
from .vehicle import build_vehicle_example

log = logging.getLogger("rphm")

SEED_ENV = "RPHM_SEED"


class UsageError(Exception):
    pass


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return DEFAULT_SEED
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def _read_json(path: str):
    try:
        return json.loads(_read(path))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from None


def _emit(text: str, path: str | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _scenario(model, text: str | None) -> dict[str, str]:
    """``"D=state,..."``; unassigned decisions take their first declared state."""
    given = {}
    for part in filter(None, (text or "").split(",")):
        if "=" not in part:
            raise UsageError(f"malformed --scenario entry {part!r} (expected id=state)")
        k, v = part.split("=", 1)
        given[k.strip()] = v.strip()
    unknown = sorted(set(given) - set(model.decision_ids))
    if unknown:
        raise UsageError(f"--scenario names non-decision variables {unknown}")
    return {d: given.get(d, model.variable(d).states[0]) for d in model.decision_ids}


def _evidence(path: str | None) -> Evidence:
    return Evidence.from_dict(_read_json(path)) if path else Evidence()


# --- subcommands ----------------------------------------------------------

def cmd_validate(args) -> int:
    model = loads_model(_read(args.model))
    violations = validate_model(model)
    kinds = {}
    for v in model.variables:
        kinds[v.kind] = kinds.get(v.kind, 0) + 1
    report = {
        "valid": not violations,
        "violations": [{"variable": v.variable, "message": v.message} for v in violations],
        "variables": len(model.variables),
        "kinds": dict(sorted(kinds.items())),
        "edges": len(model.edges),
        "decisions": model.decision_ids,
        "joint_states": math.prod(v.size for v in model.variables if v.kind != "decision"),
    }
    _emit(dump_json(report), args.output)
    return 0 if not violations else 1


def cmd_derive(args) -> int:
    rel = parse_reliability(_read(args.reliability))
    if args.source == "dmatrix":
        if not (args.dmatrix and args.tests):
            raise UsageError("derive dmatrix needs --dmatrix and --tests")
        tests = [test_params_from_dict(d) for d in _read_json(args.tests)]
        model = build_diagnostic_model(parse_dmatrix(_read(args.dmatrix)), rel, tests, args.mode)
    else:
        if not (args.faulttree and args.gates):
            raise UsageError("derive faulttree needs --faulttree and --gates")
        gates = [gate_params_from_dict(d) for d in _read_json(args.gates)]
        model = build_hazard_model(parse_fault_tree(_read(args.faulttree)), rel, gates)
    _emit(dumps_model(model), args.output)
    return 0


def cmd_merge(args) -> int:
    model = merge_models(loads_model(_read(args.diagnostic)), loads_model(_read(args.hazard)))
    if args.scenarios:
        model = attach_decisions(model, decision_specs_from_dict(_read_json(args.scenarios)))
    violations = validate_model(model)
    if violations:
        raise ModelError(violations)
    _emit(dumps_model(model), args.output)
    return 0


def cmd_query(args) -> int:
    model = loads_model(_read(args.model))
    scenario = _scenario(model, args.scenario)
    evidence = _evidence(args.evidence)
    common = dict(engine=args.engine, mc_samples=args.samples, seed=args.seed, tol=args.tol,
                  cap=args.cap, workers=args.workers)
    if args.type == "state_prob":
        if args.t is None:
            raise UsageError("state_prob queries need --t")
        result = query_condition_probability(model, scenario, evidence, [(args.var, args.state)],
                                             args.t, **common)
        query = {"type": "state_prob", "var": args.var, "state": args.state, "t": args.t}
    else:
        horizon = args.horizon if args.horizon is not None else args.t
        if horizon is None:
            raise UsageError("occupancy queries need --horizon")
        result = expected_occupancy(model, scenario, evidence, [(args.var, args.state)],
                                    horizon, **common)
        query = {"type": "occupancy", "var": args.var, "state": args.state, "horizon": horizon}
    out = result.to_dict()
    out.update(query=query, scenario=scenario)
    _emit(dump_json(out), args.output)
    return 0


def cmd_simulate(args) -> int:
    model = loads_model(_read(args.model))
    scenario = _scenario(model, args.scenario)
    traj = sample_trajectory(model, scenario, args.horizon, args.seed)
    out = traj.to_dict()
    out.update(seed=args.seed, scenario=scenario)
    _emit(dump_json(out), args.output)
    return 0


def _load_objectives(args):
    doc = _read_json(args.objectives)
    functions = {}
    if isinstance(doc, dict):
        items = doc.get("objectives")
        for d in doc.get("performance", []):
            pf = performance_function_from_dict(d)
            functions[pf.id] = pf
    else:
        items = doc
    if items is None:
        raise ParseError(f"{args.objectives}: expected a list of objectives or an object with 'objectives'")
    if args.performance:
        pdoc = _read_json(args.performance)
        for d in pdoc if isinstance(pdoc, list) else [pdoc]:
            pf = performance_function_from_dict(d)
            functions[pf.id] = pf
    return objectives_from_list(items), functions


def cmd_evaluate(args) -> int:
    model = loads_model(_read(args.model))
    objectives, functions = _load_objectives(args)
    results = evaluate_scenarios(model, objectives, functions, args.horizon, _evidence(args.evidence),
                                 args.engine, args.samples, args.seed, args.tol, args.cap,
                                 args.workers)
    report = scenario_report(results, objectives)
    report.update(horizon=args.horizon, seed=args.seed, engine=args.engine,
                  samples=args.samples if args.engine != "exact" else 0)
    _emit(dump_json(report), args.output)
    if args.table:
        Path(args.table).write_text(report_table(report), encoding="utf-8")
    if args.curves:
        hazards = [(v, args.curve_state) for v in (args.curve_var or ["LossOfVehicle"])]
        Path(args.curves).write_text(risk_curves(model, hazards, args.horizon, args.curve_points,
                                                 tol=args.tol, cap=args.cap), encoding="utf-8")
    return 0


def cmd_example(args) -> int:
    outdir = Path(args.output or "vehicle_example")
    files = build_vehicle_example(outdir)
    for name in sorted(files):
        print(outdir / name)
    return 0


# --- parser -----------------------------------------------------------------

def _inference_flags(p, seed):
    p.add_argument("--engine", choices=("exact", "mc", "auto"), default="auto")
    p.add_argument("--samples", type=int, default=DEFAULT_SAMPLES)
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--cap", type=int, default=DEFAULT_STATE_CAP, help="joint state-space cap")
    p.add_argument("--workers", type=int, default=1, help="threads for Monte Carlo batches")


def build_parser(seed: int = DEFAULT_SEED) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rphm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"rphm {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a model file")
    p.add_argument("--model", required=True)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("derive", help="derive a model from a D-matrix or a fault tree")
    p.add_argument("source", choices=("dmatrix", "faulttree"))
    p.add_argument("--reliability", required=True)
    p.add_argument("--dmatrix")
    p.add_argument("--tests")
    p.add_argument("--mode", choices=("simplified", "per_pair"), default="simplified")
    p.add_argument("--faulttree")
    p.add_argument("--gates")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_derive)

    p = sub.add_parser("merge", help="merge diagnostic and hazard models")
    p.add_argument("--diagnostic", required=True)
    p.add_argument("--hazard", required=True)
    p.add_argument("--scenarios", help="decision document to attach")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("query", help="state probability or occupancy query")
    p.add_argument("--model", required=True)
    p.add_argument("--type", choices=("state_prob", "occupancy"), default="state_prob")
    p.add_argument("--var", required=True)
    p.add_argument("--state", required=True, help="state name or index")
    p.add_argument("--t", type=float)
    p.add_argument("--horizon", type=float)
    p.add_argument("--evidence")
    p.add_argument("--scenario", help="decision assignment, e.g. Operation=standard,D_PW=single")
    _inference_flags(p, seed)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("simulate", help="dump one sampled trajectory")
    p.add_argument("--model", required=True)
    p.add_argument("--horizon", type=float, required=True)
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--scenario")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="scenario sweep with Pareto report")
    p.add_argument("--model", required=True)
    p.add_argument("--objectives", required=True)
    p.add_argument("--performance", help="extra performance functions")
    p.add_argument("--horizon", type=float, required=True)
    p.add_argument("--evidence")
    _inference_flags(p, seed)
    p.add_argument("--table", help="also write a fixed-width table here")
    p.add_argument("--curves", help="also write per-scenario risk curves (CSV) here")
    p.add_argument("--curve-var", action="append")
    p.add_argument("--curve-state", default="active")
    p.add_argument("--curve-points", type=int, default=51)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("example", help="write the bundled example")
    p.add_argument("name", choices=("vehicle",))
    p.add_argument("-o", "--output", help="output directory (default ./vehicle_example)")
    p.set_defaults(func=cmd_example)
    return parser


def main(argv=None) -> int:
    try:
        seed = _default_seed()
    except UsageError as exc:
        print(f"rphm: error: {exc}", file=sys.stderr)
        return 2
    parser = build_parser(seed)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"rphm: error: {exc}", file=sys.stderr)
        return 2
    except RphmError as exc:
        print(f"rphm: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
