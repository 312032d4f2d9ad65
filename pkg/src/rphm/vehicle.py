"""Bundled ground-vehicle example.

The fourteen subsystems carry reference MTBF, MTTR and repair-cost
values.  Which subsystems feed which hazard, the test coverage, the gate
rates and the decision overrides are illustrative assumptions shipped as
data files under ``rphm/data/vehicle`` so they can be replaced.
"""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from .composition import attach_decisions, decision_specs_from_dict, merge_models
from .ctbn import CtbnModel
from .diagnostics import build_diagnostic_model, parse_dmatrix, parse_reliability, test_params_from_dict
from .exchange import dumps_model
from .faulttree import build_hazard_model, gate_params_from_dict, parse_fault_tree

BUNDLE_FILES = (
    "dmatrix.csv", "reliability.csv", "tests.json", "faulttree.json", "gates.json",
    "scenarios.json", "performance.json", "objectives.json",
)


def read_bundle_file(name: str) -> str:
    return resources.files("rphm").joinpath("data", "vehicle", name).read_text(encoding="utf-8")


def build_models(files: dict[str, str]) -> tuple[CtbnModel, CtbnModel, CtbnModel]:
    """(diagnostic, hazard, merged-with-decisions) models from bundle texts."""
    reliability = parse_reliability(files["reliability.csv"])
    tests = [test_params_from_dict(d) for d in json.loads(files["tests.json"])]
    diag = build_diagnostic_model(parse_dmatrix(files["dmatrix.csv"]), reliability, tests)
    gates = [gate_params_from_dict(d) for d in json.loads(files["gates.json"])]
    hazard = build_hazard_model(parse_fault_tree(files["faulttree.json"]), reliability, gates)
    specs = decision_specs_from_dict(json.loads(files["scenarios.json"]))
    return diag, hazard, attach_decisions(merge_models(diag, hazard), specs)


def vehicle_model() -> CtbnModel:
    """Merged vehicle model with the Operation, D_AX and D_PW decisions attached."""
    return build_models({n: read_bundle_file(n) for n in BUNDLE_FILES})[2]


def build_vehicle_example(outdir: str | Path | None = None) -> dict[str, str]:
    """Return (and optionally write) the bundle texts plus ``vehicle.json``."""
    files = {n: read_bundle_file(n) for n in BUNDLE_FILES}
    files["vehicle.json"] = dumps_model(build_models(files)[2])
    if outdir is not None:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        for name, text in files.items():
            (out / name).write_text(text, encoding="utf-8")
    return files
