"""Hazard CTBNs derived from AND/OR fault trees.

A fault tree here is a DAG: fault leaves feed AND/OR gates, gates feed
other gates.  Each gate becomes a binary hazard vertex whose CIM drives it
towards the Boolean value of its gate: the state the gate function selects
is absorbing for as long as the parents hold still.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .ctbn import Cim, CtbnModel, Variable, parent_assignments, validate_model
from .diagnostics import FAULT_STATES, FaultReliability, fault_cim, nominal_initial
from .errors import AssemblyError, ModelError, ParameterError, ParseError
from .exchange import parse_assignment_key

HAZARD_STATES = ("clear", "active")
GATE_OPS = ("and", "or")
GATE_MODES = ("simplified", "full", "noisy_or")


@dataclass(frozen=True)
class Node:
    kind: str  # "fault" | "gate"
    gate_op: str | None = None
    children: tuple[str, ...] = ()
    fault: str | None = None  # underlying fault a leaf record refers to
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))


@dataclass(frozen=True)
class FaultTree:
    nodes: Mapping[str, Node]
    top: str
    warnings: tuple[str, ...] = ()

    def __eq__(self, other):
        return (isinstance(other, FaultTree) and self.top == other.top
                and dict(self.nodes) == dict(other.nodes))

    def fault_of(self, node_id: str) -> str:
        node = self.nodes[node_id]
        return node.fault or node_id

    @property
    def gate_ids(self) -> list[str]:
        return [k for k, n in self.nodes.items() if n.kind == "gate"]

    @property
    def fault_ids(self) -> list[str]:
        """Distinct underlying faults, in first-seen order."""
        out = []
        for k, n in self.nodes.items():
            if n.kind == "fault" and self.fault_of(k) not in out:
                out.append(self.fault_of(k))
        return out

    def evaluate(self, faults: Mapping[str, bool]) -> dict[str, bool]:
        """Boolean value of every gate for a leaf assignment keyed by fault id."""
        memo: dict[str, bool] = {}

        def value(nid):
            if nid in memo:
                return memo[nid]
            node = self.nodes[nid]
            if node.kind == "fault":
                out = bool(faults[self.fault_of(nid)])
            else:
                vals = [value(c) for c in node.children]
                out = all(vals) if node.gate_op == "and" else any(vals)
            memo[nid] = out
            return out

        return {g: value(g) for g in self.gate_ids}

    def to_dict(self) -> dict:
        nodes = {}
        for k, n in self.nodes.items():
            d = {"kind": n.kind}
            if n.kind == "gate":
                d.update(gate_op=n.gate_op, children=list(n.children))
            elif n.fault and n.fault != k:
                d["fault"] = n.fault
            if n.name:
                d["name"] = n.name
            nodes[k] = d
        return {"nodes": nodes, "top": self.top}


def _find_cycle(nodes: Mapping[str, Node]) -> list[str] | None:
    color: dict[str, int] = {}
    stack: list[str] = []

    def visit(nid):
        color[nid] = 1
        stack.append(nid)
        for c in nodes[nid].children:
            if color.get(c) == 1:
                return stack[stack.index(c):] + [c]
            if c not in color:
                found = visit(c)
                if found:
                    return found
        stack.pop()
        color[nid] = 2
        return None

    for nid in sorted(nodes):
        if nid not in color:
            found = visit(nid)
            if found:
                return found
    return None


def make_fault_tree(nodes: Mapping[str, Node], top: str) -> FaultTree:
    nodes = dict(nodes)
    if top not in nodes:
        raise ParseError(f"top node {top!r} is not defined")
    for nid, node in nodes.items():
        if node.kind not in ("fault", "gate"):
            raise ParseError(f"node {nid!r}: kind must be 'fault' or 'gate'")
        if node.kind == "gate":
            if node.gate_op not in GATE_OPS:
                raise ParseError(f"gate {nid!r}: unsupported gate_op {node.gate_op!r} "
                                 "(only 'and' and 'or')")
            if not node.children:
                raise ParseError(f"gate {nid!r} has no children")
            for c in node.children:
                if c not in nodes:
                    raise ParseError(f"gate {nid!r} references undefined node {c!r}")
        elif node.children:
            raise ParseError(f"fault {nid!r} cannot have children")
    cycle = _find_cycle(nodes)
    if cycle:
        raise ParseError(f"not a DAG, cycle: {cycle}")
    reach, stack = set(), [top]
    while stack:
        nid = stack.pop()
        if nid not in reach:
            reach.add(nid)
            stack.extend(nodes[nid].children)
    warnings = tuple(f"node {n} does not reach the top {top}" for n in nodes if n not in reach)
    return FaultTree(nodes, top, warnings)


def fault_tree_from_dict(data: Mapping) -> FaultTree:
    try:
        nodes = {}
        for nid, d in data["nodes"].items():
            kind = d["kind"]
            nodes[nid] = Node(kind, d.get("gate_op"), tuple(d.get("children", [])),
                              d.get("fault") if kind == "fault" else None, d.get("name", ""))
        top = data["top"]
    except (KeyError, TypeError, AttributeError) as exc:
        raise ParseError(f"malformed fault tree: {exc!r}") from None
    return make_fault_tree(nodes, top)


def parse_fault_tree(text: str) -> FaultTree:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"fault tree is not valid JSON: {exc}") from None
    return fault_tree_from_dict(data)


def prune_fault_tree(ft: FaultTree) -> FaultTree:
    """Collapse duplicate fault records into one node per fault id.

    Repeated children of a gate are deduplicated (AND/OR are idempotent).
    Gates are never merged or removed.
    """
    rename = {nid: ft.fault_of(nid) for nid, n in ft.nodes.items() if n.kind == "fault"}
    gate_ids = set(ft.gate_ids)
    clash = sorted(set(rename.values()) & gate_ids)
    if clash:
        raise ParseError(f"fault ids collide with gate ids: {clash}")
    nodes: dict[str, Node] = {}
    for nid, node in ft.nodes.items():
        if node.kind == "fault":
            fid = rename[nid]
            if fid not in nodes:
                names = [ft.nodes[k].name for k in ft.nodes if rename.get(k) == fid and ft.nodes[k].name]
                nodes[fid] = Node("fault", name=names[0] if names else "")
        else:
            children = []
            for c in node.children:
                c = rename.get(c, c)
                if c not in children:
                    children.append(c)
            nodes[nid] = Node("gate", node.gate_op, tuple(children), name=node.name)
    return make_fault_tree(nodes, ft.top)


def derive_fault_tree_structure(ft: FaultTree) -> CtbnModel:
    """One binary vertex per fault and gate; an edge from every gate input."""
    faults = ft.fault_ids
    variables = [Variable(f, FAULT_STATES, "fault") for f in faults]
    variables += [Variable(g, HAZARD_STATES, "hazard") for g in ft.gate_ids]
    edges = {(ft.fault_of(c) if ft.nodes[c].kind == "fault" else c, g)
             for g in ft.gate_ids for c in ft.nodes[g].children}
    return CtbnModel(variables, edges, {}, {})


@dataclass(frozen=True)
class GateParams:
    id: str
    lam: float = 1.0
    mu: float = 0.0
    mode: str = "simplified"
    full_rates: Mapping[str, float] = field(default_factory=dict)
    noisy_rates: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in GATE_MODES:
            raise ParameterError(f"gate {self.id}: unknown mode {self.mode!r}")
        rates = [self.lam, self.mu, *self.full_rates.values(), *self.noisy_rates.values()]
        if not all(r >= 0 and math.isfinite(r) for r in rates):
            raise ParameterError(f"gate {self.id}: rates must be finite and non-negative")


def gate_params_from_dict(d: Mapping) -> GateParams:
    try:
        return GateParams(
            d["id"], float(d.get("lambda", 1.0)), float(d.get("mu", 0.0)),
            d.get("mode", "simplified"),
            {k: float(v) for k, v in (d.get("full_rates") or {}).items()},
            {k: float(v) for k, v in (d.get("noisy_rates") or {}).items()},
        )
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ParseError(f"malformed gate parameters: {exc!r}") from None


def _fires(a: np.ndarray) -> np.ndarray:
    return np.array([[-a, a], [0.0, 0.0]]) + 0.0


def _resets(b: np.ndarray) -> np.ndarray:
    return np.array([[0.0, 0.0], [b, -b]]) + 0.0


def gate_cim(g: GateParams, gate_op: str, parents: Sequence[str],
             parent_vars: Mapping[str, Variable] | None = None) -> Cim:
    """CIM of a gate vertex over binary parents.

    When the gate function is 1 for an assignment the matrix moves the
    vertex to state 1 and holds it there; when it is 0 the reverse.
    """
    parents = tuple(sorted(parents))
    if gate_op not in GATE_OPS:
        raise ParameterError(f"gate {g.id}: unsupported gate_op {gate_op!r}")
    if g.mode == "noisy_or" and gate_op != "or":
        raise ParameterError(f"gate {g.id}: noisy_or mode applies to OR gates only")
    if g.mode == "noisy_or":
        missing = set(parents) - set(g.noisy_rates)
        extra = set(g.noisy_rates) - set(parents)
        if missing or extra:
            raise ParameterError(f"gate {g.id}: noisy_rates must cover exactly the parents "
                                 f"(missing {sorted(missing)}, extra {sorted(extra)})")
    full = {}
    if g.mode == "full":
        pv = parent_vars or {p: Variable(p, ("0", "1")) for p in parents}
        for key, rate in g.full_rates.items():
            parsed = parse_assignment_key(key, pv)
            if set(parsed) != set(parents):
                raise ParameterError(f"gate {g.id}: full_rates key {key!r} must assign {list(parents)}")
            full[tuple(parsed[p] for p in parents)] = rate
    matrices = {}
    for a in parent_assignments([2] * len(parents)):
        on = all(a) if gate_op == "and" else any(a)
        if g.mode == "full":
            if a not in full:
                raise ParameterError(f"gate {g.id}: full_rates lacks assignment {dict(zip(parents, a))}")
            rate = full[a]
        elif g.mode == "noisy_or" and on:
            rate = float(sum(g.noisy_rates[p] for p, s in zip(parents, a) if s))
        else:
            rate = g.lam if on else g.mu
        matrices[a] = _fires(rate) if on else _resets(rate)
    return Cim(g.id, parents, matrices)


def build_hazard_model(ft: FaultTree, fault_reliability: Iterable[FaultReliability],
                       gate_params: Iterable[GateParams]) -> CtbnModel:
    """Prune, derive the structure and parameterize faults and gates."""
    pruned = prune_fault_tree(ft)
    skeleton = derive_fault_tree_structure(pruned)
    rel = {r.id: r for r in fault_reliability}
    gps = {g.id: g for g in gate_params}
    missing = [f for f in pruned.fault_ids if f not in rel]
    missing += [g for g in pruned.gate_ids if g not in gps]
    if missing:
        raise AssemblyError(f"missing parameter records for {missing}")
    cims = {f: fault_cim(rel[f]) for f in pruned.fault_ids}
    by_id = {v.id: v for v in skeleton.variables}
    for gid in pruned.gate_ids:
        parents = skeleton.parents(gid)
        cims[gid] = gate_cim(gps[gid], pruned.nodes[gid].gate_op, parents,
                             {p: by_id[p] for p in parents})
    initial = {v.id: nominal_initial(v.size) for v in skeleton.variables}
    model = skeleton.replace(cims=cims, initial=initial)
    violations = validate_model(model)
    if violations:
        raise ModelError(violations)
    return model
