"""JSON exchange format for CTBN models.

Rates and probabilities are written as decimal strings with 12
significant digits so golden files stay stable across platforms::

    {"variables": [{"id": "F1", "states": ["ok", "failed"], "kind": "fault"}],
     "edges": [["F1", "T1"]],
     "cims": {"T1": {"parents": ["F1"],
                     "matrices": {"F1=ok": [["-1.05", "1.05"], ["20", "-20"]]}}},
     "initial": {"F1": ["1", "0"]},
     "edge_masks": []}

Parent assignments are keyed ``"parentId=state,..."`` in sorted parent-id
order; a parentless CIM uses the empty key.
"""
from __future__ import annotations

import json
from typing import Any

import numpy as np

from .ctbn import Cim, CtbnModel, EdgeMask, Variable, parent_assignments
from .errors import ParseError, RphmError

SIG_DIGITS = 12


def fmt(x: float) -> str:
    s = format(float(x) + 0.0, f".{SIG_DIGITS}g")
    return "0" if s == "-0" else s


def parse_number(s) -> float:
    if isinstance(s, bool):
        raise ParseError(f"expected a number, got {s!r}")
    try:
        return float(s)
    except (TypeError, ValueError):
        raise ParseError(f"expected a decimal number, got {s!r}") from None


def assignment_key(model_or_vars, parent_ids, assignment) -> str:
    """``"A=s,B=t"`` for a parent assignment given as state indices."""
    lookup = model_or_vars.variable if hasattr(model_or_vars, "variable") else model_or_vars.__getitem__
    pairs = sorted(zip(parent_ids, assignment))
    return ",".join(f"{p}={lookup(p).states[s]}" for p, s in pairs)


def parse_assignment_key(key: str, variables: dict[str, Variable]) -> dict[str, int]:
    out = {}
    if key == "":
        return out
    for part in key.split(","):
        if "=" not in part:
            raise ParseError(f"malformed parent assignment {key!r}")
        name, state = part.split("=", 1)
        name, state = name.strip(), state.strip()
        if name not in variables:
            raise ParseError(f"parent assignment {key!r} names unknown variable {name!r}")
        try:
            out[name] = variables[name].state_index(state)
        except RphmError as exc:
            raise ParseError(str(exc)) from None
    return out


def model_to_dict(model: CtbnModel) -> dict[str, Any]:
    variables = sorted(model.variables, key=lambda v: v.id)
    cims = {}
    for v in variables:
        cim = model.cims[v.id]
        sizes = [model.variable(p).size for p in cim.parent_ids]
        mats = {}
        for a in parent_assignments(sizes):
            if a not in cim.matrices:
                continue
            key = assignment_key(model, cim.parent_ids, a)
            mats[key] = [[fmt(x) for x in row] for row in cim.matrices[a]]
        cims[v.id] = {"parents": sorted(cim.parent_ids),
                      "matrices": dict(sorted(mats.items()))}
    return {
        "variables": [{"id": v.id, "states": list(v.states), "kind": v.kind} for v in variables],
        "edges": [list(e) for e in sorted(model.edges)],
        "cims": cims,
        "initial": {v.id: [fmt(x) for x in model.initial[v.id]] for v in variables},
        "edge_masks": [{"decision": m.decision, "state": m.state, "parent": m.parent,
                        "child": m.child}
                       for m in sorted(model.edge_masks,
                                       key=lambda m: (m.decision, m.state, m.parent, m.child))],
    }


def model_from_dict(data: dict[str, Any]) -> CtbnModel:
    try:
        variables = [Variable(d["id"], tuple(d["states"]), d.get("kind", "fault"))
                     for d in data["variables"]]
        by_id = {v.id: v for v in variables}
        edges = [tuple(e) for e in data.get("edges", [])]
        cims = {}
        for vid, spec in data["cims"].items():
            if vid not in by_id:
                raise ParseError(f"CIM for unknown variable {vid!r}")
            parents = tuple(sorted(spec.get("parents", [])))
            mats = {}
            for key, rows in spec["matrices"].items():
                assign = parse_assignment_key(key, by_id)
                if set(assign) != set(parents):
                    raise ParseError(f"CIM {vid!r}: key {key!r} does not cover parents {list(parents)}")
                mats[tuple(assign[p] for p in parents)] = np.array(
                    [[parse_number(x) for x in row] for row in rows], dtype=float)
            cims[vid] = Cim(vid, parents, mats)
        initial = {vid: np.array([parse_number(x) for x in dist], dtype=float)
                   for vid, dist in data["initial"].items()}
        masks = [EdgeMask(m["decision"], m["state"], m["parent"], m["child"])
                 for m in data.get("edge_masks", [])]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed model document: {exc!r}") from None
    return CtbnModel(variables, edges, cims, initial, masks)


def dumps_model(model: CtbnModel) -> str:
    return json.dumps(model_to_dict(model), indent=1, sort_keys=False) + "\n"


def loads_model(text: str) -> CtbnModel:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"model is not valid JSON: {exc}") from None
    return model_from_dict(data)


def dump_json(obj) -> str:
    """Canonical JSON text used for every emitted document."""
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"
