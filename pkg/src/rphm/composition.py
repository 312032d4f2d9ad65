"""Merging derived models and scenario handling through decision vertices."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .ctbn import Cim, CtbnModel, EdgeMask, Variable, parent_assignments, rebuild_diagonal
from .errors import BindingError, MergeError, ParseError, SpecError
from .exchange import parse_assignment_key, parse_number


@dataclass(frozen=True)
class Override:
    """Replacement behaviour of ``child`` per decision state.

    Each ``per_state`` value is one of::

        {"scale_lambda": x}             scale failure-direction rates by x
        {"matrix": [[...]]}             one matrix for every parent assignment
        {"matrices": {"P=s,...": [[...]]}}  one matrix per parent assignment

    Decision states without an entry keep the child's original matrices.
    """

    child: str
    per_state: Mapping[str, Any]


@dataclass(frozen=True)
class DecisionSpec:
    id: str
    states: tuple[str, ...]
    overrides: tuple[Override, ...] = ()
    edge_masks: tuple[tuple[str, str, str], ...] = ()  # (state, parent, child)

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "overrides", tuple(self.overrides))
        object.__setattr__(self, "edge_masks", tuple(tuple(m) for m in self.edge_masks))


@dataclass(frozen=True)
class ScenarioAssignment:
    states: Mapping[str, str] = field(default_factory=dict)

    def label(self) -> str:
        return ",".join(f"{k}={v}" for k, v in sorted(self.states.items())) or "(none)"


def decision_specs_from_dict(data: Mapping[str, Any]) -> list[DecisionSpec]:
    """Parse the scenario document ``{"decisions": [...]}``."""
    try:
        specs = []
        for d in data["decisions"]:
            overrides = [Override(o["child"], dict(o["per_state"])) for o in d.get("overrides", [])]
            masks = [(m["state"], m["parent"], m["child"]) for m in d.get("edge_masks", [])]
            specs.append(DecisionSpec(d["id"], tuple(d["states"]), overrides, masks))
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed scenario document: {exc!r}") from None
    return specs


def merge_models(ctbn_d: CtbnModel, ctbn_f: CtbnModel) -> CtbnModel:
    """Union of a diagnostic and a hazard model over their shared faults."""
    faults_d = set(ctbn_d.ids_of_kind("fault"))
    faults_f = set(ctbn_f.ids_of_kind("fault"))
    if faults_d != faults_f:
        diff = sorted(faults_d ^ faults_f)
        raise MergeError(f"fault sets differ: {diff}")
    for fid in sorted(faults_d):
        a, b = ctbn_d.cims[fid], ctbn_f.cims[fid]
        same = (a.parent_ids == b.parent_ids and set(a.matrices) == set(b.matrices)
                and all(np.array_equal(a.matrices[k], b.matrices[k]) for k in a.matrices)
                and np.array_equal(ctbn_d.initial[fid], ctbn_f.initial[fid])
                and ctbn_d.variable(fid).states == ctbn_f.variable(fid).states)
        if not same:
            raise MergeError(f"fault {fid!r} is parameterized differently in the two models")
    others_d = set(ctbn_d.ids) - faults_d
    others_f = set(ctbn_f.ids) - faults_f
    clash = sorted(others_d & others_f)
    if clash:
        raise MergeError(f"non-fault variables present in both models: {clash}")
    variables = list(ctbn_d.variables) + [v for v in ctbn_f.variables if v.id in others_f]
    cims = dict(ctbn_d.cims)
    cims.update({k: c for k, c in ctbn_f.cims.items() if k in others_f})
    initial = dict(ctbn_d.initial)
    initial.update({k: d for k, d in ctbn_f.initial.items() if k in others_f})
    return CtbnModel(variables, set(ctbn_d.edges) | set(ctbn_f.edges), cims, initial,
                     ctbn_d.edge_masks + ctbn_f.edge_masks)


def scale_failure_rates(matrix: np.ndarray, factor: float) -> np.ndarray:
    """Multiply rates towards higher-index (more degraded) states by ``factor``."""
    if factor < 0 or not np.isfinite(factor):
        raise SpecError(f"scale factor must be finite and non-negative, got {factor!r}")
    q = np.array(matrix, dtype=float)
    upper = np.triu(np.ones_like(q, dtype=bool), k=1)
    q[upper] *= factor
    return rebuild_diagonal(q)


def _replacement(model, spec, child, state, override, reduced, assign):
    """Matrix of ``child`` for decision ``state`` at full old-parent ``assign``."""
    size = model.variable(child).size
    if "matrix" in override:
        m = np.array([[parse_number(x) for x in row] for row in override["matrix"]], dtype=float)
    elif "matrices" in override:
        table = override["matrices"]
        by_id = {p: model.variable(p) for p in reduced}
        lookup = {}
        for key, rows in table.items():
            try:
                parsed = parse_assignment_key(key, by_id)
            except ParseError as exc:
                raise SpecError(f"decision {spec.id!r}, child {child!r}: {exc}") from None
            if set(parsed) != set(reduced):
                raise SpecError(f"decision {spec.id!r}, child {child!r}, state {state!r}: "
                                f"key {key!r} must assign exactly {sorted(reduced)}")
            lookup[tuple(parsed[p] for p in reduced)] = rows
        want = tuple(assign[p] for p in reduced)
        if want not in lookup:
            raise SpecError(f"decision {spec.id!r}, child {child!r}, state {state!r}: "
                            f"no matrix for parent assignment {dict(zip(reduced, want))}")
        m = np.array([[parse_number(x) for x in row] for row in lookup[want]], dtype=float)
    else:
        raise SpecError(f"decision {spec.id!r}, child {child!r}, state {state!r}: "
                        "override needs 'scale_lambda', 'matrix' or 'matrices'")
    if m.shape != (size, size):
        raise SpecError(f"decision {spec.id!r}, child {child!r}: matrix must be {size}x{size}")
    return m


def attach_decision(model: CtbnModel, spec: DecisionSpec) -> CtbnModel:
    """Add decision vertex ``spec`` as a parent of every child it affects.

    Decision states without an override reuse the child's original matrix
    objects, so the original behaviour is preserved bit for bit.
    """
    if model.has(spec.id):
        raise SpecError(f"variable {spec.id!r} already exists")
    if len(spec.states) < 2 or len(set(spec.states)) != len(spec.states):
        raise SpecError(f"decision {spec.id!r} needs at least two distinct states")
    overrides = {}
    for o in spec.overrides:
        if not model.has(o.child):
            raise SpecError(f"decision {spec.id!r} overrides unknown variable {o.child!r}")
        if model.variable(o.child).kind == "decision":
            raise SpecError(f"decision {spec.id!r} cannot override decision {o.child!r}")
        bad = set(o.per_state) - set(spec.states)
        if bad:
            raise SpecError(f"decision {spec.id!r}: unknown states {sorted(bad)}")
        if o.child in overrides:
            raise SpecError(f"decision {spec.id!r}: duplicate override for {o.child!r}")
        overrides[o.child] = o.per_state
    severed: dict[tuple[str, str], set[str]] = {}
    for state, parent, child in spec.edge_masks:
        if state not in spec.states:
            raise SpecError(f"decision {spec.id!r}: edge mask on unknown state {state!r}")
        if (parent, child) not in model.edges:
            raise SpecError(f"decision {spec.id!r}: no edge {parent}->{child} to sever")
        per_state = overrides.get(child, {})
        if state not in per_state or "scale_lambda" in per_state[state]:
            raise SpecError(f"decision {spec.id!r}: severing {parent}->{child} in state {state!r} "
                            "needs a replacement CIM for that state")
        severed.setdefault((state, child), set()).add(parent)

    children = sorted(set(overrides) | {c for _, _, c in spec.edge_masks})
    k = len(spec.states)
    cims = dict(model.cims)
    for child in children:
        old = model.cims[child]
        old_parents = list(old.parent_ids)
        sizes = [model.variable(p).size for p in old_parents]
        new_parents = tuple(sorted(old_parents + [spec.id]))
        dpos = new_parents.index(spec.id)
        matrices = {}
        for d, state in enumerate(spec.states):
            override = overrides.get(child, {}).get(state)
            reduced = [p for p in old_parents if p not in severed.get((state, child), set())]
            for a in parent_assignments(sizes):
                assign = dict(zip(old_parents, a))
                if override is None:
                    m = old.matrices[a]
                elif "scale_lambda" in override:
                    m = scale_failure_rates(old.matrices[a], parse_number(override["scale_lambda"]))
                else:
                    m = _replacement(model, spec, child, state, override, reduced, assign)
                key = list(a)
                key.insert(dpos, d)
                matrices[tuple(key)] = m
        cims[child] = Cim(child, new_parents, matrices)
    cims[spec.id] = Cim(spec.id, (), {(): np.zeros((k, k))})
    initial = dict(model.initial)
    initial[spec.id] = np.full(k, 1.0 / k)
    masks = model.edge_masks + tuple(EdgeMask(spec.id, s, p, c) for s, p, c in spec.edge_masks)
    return CtbnModel(
        list(model.variables) + [Variable(spec.id, spec.states, "decision")],
        set(model.edges) | {(spec.id, c) for c in children},
        cims, initial, masks,
    )


def _assignment_dict(a) -> dict[str, str]:
    if isinstance(a, ScenarioAssignment):
        return dict(a.states)
    return dict(a or {})


def bind_scenario(model: CtbnModel, assignment) -> CtbnModel:
    """Slice every CIM at the assigned decision states; drop decision vertices."""
    a = _assignment_dict(assignment)
    decisions = model.decision_ids
    missing = [d for d in decisions if d not in a]
    if missing:
        raise BindingError(f"scenario does not assign decisions {missing}")
    fixed = {}
    for d in decisions:
        var = model.variable(d)
        if a[d] not in var.states:
            raise BindingError(f"decision {d!r} has no state {a[d]!r}")
        fixed[d] = var.states.index(a[d])
    if not decisions:
        return model
    cut = {(m.parent, m.child) for m in model.edge_masks if a.get(m.decision) == m.state}
    cims = {}
    for v in model.variables:
        if v.kind == "decision":
            continue
        cim = model.cims[v.id]
        dropped = {p for p in cim.parent_ids if p in fixed or (p, v.id) in cut}
        if not dropped:
            cims[v.id] = cim
            continue
        kept = [p for p in cim.parent_ids if p not in dropped]
        sizes = [model.variable(p).size for p in kept]
        matrices = {}
        for sub in parent_assignments(sizes):
            full = dict(zip(kept, sub))
            key = tuple(full[p] if p in full else fixed.get(p, 0) for p in cim.parent_ids)
            matrices[sub] = cim.matrices[key]
        cims[v.id] = Cim(v.id, tuple(kept), matrices)
    edges = {(p, c) for p, c in model.edges if p not in fixed and (p, c) not in cut}
    return CtbnModel(
        [v for v in model.variables if v.kind != "decision"],
        edges, cims,
        {k: d for k, d in model.initial.items() if k not in fixed},
        (),
    )


def attach_decisions(model: CtbnModel, specs) -> CtbnModel:
    for spec in specs:
        model = attach_decision(model, spec)
    return model
