"""Continuous time Bayesian network models and their joint Markov chain.

A model is a set of finite-state variables.  Each variable carries an
initial distribution and a conditional intensity matrix (CIM): one
intensity matrix per joint assignment of its parents.  Rates are per hour.
State 0 is always the nominal state (non-failed, pass, no hazard).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import CapacityError, ParameterError, RphmError

KINDS = ("fault", "test", "hazard", "decision")
DEFAULT_STATE_CAP = 2 ** 20
ROW_SUM_RTOL = 1e-9
INITIAL_ATOL = 1e-12


@dataclass(frozen=True)
class Variable:
    id: str
    states: tuple[str, ...]
    kind: str = "fault"

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))

    @property
    def size(self) -> int:
        return len(self.states)

    def state_index(self, state) -> int:
        """Resolve a state given by name or by integer index."""
        if isinstance(state, str):
            if state in self.states:
                return self.states.index(state)
            try:
                state = int(state)
            except ValueError:
                raise RphmError(f"variable {self.id!r} has no state {state!r}") from None
        if isinstance(state, (int, np.integer)) and 0 <= state < self.size:
            return int(state)
        raise RphmError(f"variable {self.id!r} has no state {state!r}")


@dataclass(frozen=True)
class EdgeMask:
    """Edge ``parent -> child`` is severed while ``decision`` is in ``state``."""

    decision: str
    state: str
    parent: str
    child: str


def _freeze(matrix) -> np.ndarray:
    arr = np.array(matrix, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Cim:
    """Conditional intensity matrix of ``owner``.

    ``matrices`` maps a tuple of parent state indices, aligned with
    ``parent_ids``, to a k x k intensity matrix.
    """

    owner: str
    parent_ids: tuple[str, ...]
    matrices: Mapping[tuple[int, ...], np.ndarray]

    def __post_init__(self):
        object.__setattr__(self, "parent_ids", tuple(self.parent_ids))
        frozen = {tuple(int(s) for s in k): _freeze(m) if not _is_frozen(m) else m
                  for k, m in self.matrices.items()}
        object.__setattr__(self, "matrices", frozen)

    def matrix(self, parent_states: Mapping[str, int]) -> np.ndarray:
        return self.matrices[tuple(parent_states[p] for p in self.parent_ids)]


def _is_frozen(m) -> bool:
    return isinstance(m, np.ndarray) and m.dtype == float and not m.flags.writeable


def parent_assignments(sizes: Sequence[int]) -> Iterable[tuple[int, ...]]:
    """All parent assignments, first parent most significant."""
    return itertools.product(*(range(n) for n in sizes))


@dataclass(frozen=True, eq=False)
class CtbnModel:
    variables: tuple[Variable, ...]
    edges: frozenset
    cims: Mapping[str, Cim]
    initial: Mapping[str, np.ndarray]
    edge_masks: tuple[EdgeMask, ...] = ()
    _by_id: dict = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "edges", frozenset(tuple(e) for e in self.edges))
        object.__setattr__(self, "cims", dict(self.cims))
        object.__setattr__(self, "initial",
                           {k: v if _is_frozen(v) else _freeze(v) for k, v in self.initial.items()})
        object.__setattr__(self, "edge_masks", tuple(self.edge_masks))
        object.__setattr__(self, "_by_id", {v.id: v for v in self.variables})

    @property
    def ids(self) -> list[str]:
        return [v.id for v in self.variables]

    def variable(self, vid: str) -> Variable:
        try:
            return self._by_id[vid]
        except KeyError:
            raise RphmError(f"unknown variable {vid!r}") from None

    def has(self, vid: str) -> bool:
        return vid in self._by_id

    def parents(self, vid: str) -> list[str]:
        return sorted(p for p, c in self.edges if c == vid)

    def children(self, vid: str) -> list[str]:
        return sorted(c for p, c in self.edges if p == vid)

    def ids_of_kind(self, kind: str) -> list[str]:
        return [v.id for v in self.variables if v.kind == kind]

    @property
    def decision_ids(self) -> list[str]:
        return sorted(self.ids_of_kind("decision"))

    def replace(self, **changes) -> "CtbnModel":
        fields = dict(variables=self.variables, edges=self.edges, cims=self.cims,
                      initial=self.initial, edge_masks=self.edge_masks)
        fields.update(changes)
        return CtbnModel(**fields)

    def subset(self, keep: Iterable[str]) -> "CtbnModel":
        """Restrict to ``keep``, which must be closed under parents."""
        keep = set(keep)
        for vid in keep:
            missing = set(self.cims[vid].parent_ids) - keep
            if missing:
                raise RphmError(f"subset drops parents {sorted(missing)} of {vid!r}")
        return CtbnModel(
            variables=[v for v in self.variables if v.id in keep],
            edges=[e for e in self.edges if e[0] in keep and e[1] in keep],
            cims={k: c for k, c in self.cims.items() if k in keep},
            initial={k: d for k, d in self.initial.items() if k in keep},
            edge_masks=[m for m in self.edge_masks if m.child in keep and m.decision in keep],
        )


@dataclass(frozen=True)
class Violation:
    variable: str
    message: str

    def __str__(self):
        return f"{self.variable}: {self.message}"


def two_state_im(rate_0to1: float, rate_1to0: float) -> np.ndarray:
    """Intensity matrix ``[[-a, a], [b, -b]]`` of a binary variable."""
    for name, r in (("rate_0to1", rate_0to1), ("rate_1to0", rate_1to0)):
        if not math.isfinite(r) or r < 0:
            raise ParameterError(f"{name} must be finite and non-negative, got {r!r}")
    a, b = float(rate_0to1), float(rate_1to0)
    return np.array([[-a, a], [b, -b]]) + 0.0


def rebuild_diagonal(matrix) -> np.ndarray:
    q = np.array(matrix, dtype=float)
    np.fill_diagonal(q, 0.0)
    np.fill_diagonal(q, -q.sum(axis=1))
    return q + 0.0


def check_intensity_matrix(q: np.ndarray, size: int | None = None) -> list[str]:
    """Problems with a single intensity matrix, as short messages."""
    q = np.asarray(q, dtype=float)
    problems = []
    if q.ndim != 2 or q.shape[0] != q.shape[1]:
        return [f"matrix is not square: shape {q.shape}"]
    if size is not None and q.shape[0] != size:
        problems.append(f"matrix dimension {q.shape[0]} != state count {size}")
    if not np.all(np.isfinite(q)):
        return problems + ["non-finite entry"]
    off = q - np.diag(np.diag(q))
    if np.any(off < 0):
        problems.append("negative off-diagonal")
    scale = np.max(np.abs(q)) if q.size else 0.0
    if np.any(np.abs(q.sum(axis=1)) > ROW_SUM_RTOL * scale):
        problems.append("row does not sum to zero")
    return problems


def validate_model(model: CtbnModel) -> list[Violation]:
    """Return every invariant violation of ``model``; empty when valid."""
    out: list[Violation] = []
    seen = set()
    for v in model.variables:
        if v.id in seen:
            out.append(Violation(v.id, "duplicate variable id"))
        seen.add(v.id)
        if v.kind not in KINDS:
            out.append(Violation(v.id, f"unknown kind {v.kind!r}"))
        if len(v.states) < 2:
            out.append(Violation(v.id, "fewer than two states"))
        if len(set(v.states)) != len(v.states):
            out.append(Violation(v.id, "duplicate state names"))

    for p, c in sorted(model.edges):
        for end in (p, c):
            if not model.has(end):
                out.append(Violation(end, f"edge {p}->{c} references unknown variable"))

    for v in model.variables:
        cim = model.cims.get(v.id)
        if cim is None:
            out.append(Violation(v.id, "missing CIM"))
            continue
        graph_parents = set(model.parents(v.id))
        if set(cim.parent_ids) != graph_parents or len(set(cim.parent_ids)) != len(cim.parent_ids):
            out.append(Violation(v.id, f"CIM parents {list(cim.parent_ids)} do not match "
                                       f"graph parents {sorted(graph_parents)}"))
        if v.kind == "decision" and graph_parents:
            out.append(Violation(v.id, "decision variable has parents"))
        try:
            sizes = [model.variable(p).size for p in cim.parent_ids]
        except RphmError:
            continue
        expected = set(parent_assignments(sizes))
        if set(cim.matrices) - expected:
            out.append(Violation(v.id, "CIM has assignments outside the parent cross product"))
        if expected - set(cim.matrices):
            out.append(Violation(v.id, "incomplete CIM"))
        for key in sorted(set(cim.matrices) & expected):
            q = cim.matrices[key]
            for problem in check_intensity_matrix(q, v.size):
                out.append(Violation(v.id, f"{problem} at parent assignment {key}"))
            if v.kind == "decision" and np.any(q != 0):
                out.append(Violation(v.id, "decision variable has non-zero rates"))

        init = model.initial.get(v.id)
        if init is None:
            out.append(Violation(v.id, "missing initial distribution"))
            continue
        init = np.asarray(init, dtype=float)
        if init.shape != (v.size,):
            out.append(Violation(v.id, "initial distribution has wrong length"))
        elif not np.all(np.isfinite(init)) or np.any(init < 0):
            out.append(Violation(v.id, "initial distribution has negative or non-finite entry"))
        elif abs(init.sum() - 1.0) > INITIAL_ATOL:
            out.append(Violation(v.id, "initial distribution does not sum to 1"))
        elif v.kind == "decision" and not np.allclose(init, 1.0 / v.size, rtol=0, atol=1e-12):
            out.append(Violation(v.id, "decision variable initial distribution is not uniform"))

    for m in model.edge_masks:
        if not model.has(m.decision) or model.variable(m.decision).kind != "decision":
            out.append(Violation(m.decision, "edge mask names a non-decision variable"))
        elif m.state not in model.variable(m.decision).states:
            out.append(Violation(m.decision, f"edge mask state {m.state!r} unknown"))
        if (m.parent, m.child) not in model.edges:
            out.append(Violation(m.child, f"edge mask on absent edge {m.parent}->{m.child}"))
    return out


def stationary_distribution(im) -> np.ndarray:
    """Stationary distribution of an intensity matrix.

    Transient states get zero mass.  If exactly one closed communicating
    class exists the distribution is unique (an absorbing state yields its
    indicator); otherwise there is no unique answer and an error is raised.
    """
    q = np.asarray(im, dtype=float)
    problems = check_intensity_matrix(q)
    if problems:
        raise ParameterError("; ".join(problems))
    n = q.shape[0]
    adj = sp.csr_matrix((q > 0) & ~np.eye(n, dtype=bool))
    ncomp, labels = connected_components(adj, directed=True, connection="strong")
    closed = []
    for c in range(ncomp):
        members = np.flatnonzero(labels == c)
        outside = np.setdiff1d(np.arange(n), members)
        if not np.any(q[np.ix_(members, outside)] > 0):
            closed.append(members)
    if len(closed) != 1:
        raise RphmError("no unique stationary distribution")
    members = closed[0]
    pi = np.zeros(n)
    if len(members) == 1:
        pi[members[0]] = 1.0
        return pi
    sub = q[np.ix_(members, members)]
    a = sub.T.copy()
    a[-1, :] = 1.0
    b = np.zeros(len(members))
    b[-1] = 1.0
    pi[members] = np.linalg.solve(a, b)
    return pi


@dataclass(frozen=True, eq=False)
class JointGenerator:
    """Generator of the amalgamated chain over all non-decision variables.

    Joint index is mixed-radix little-endian over ``var_ids`` (sorted):
    ``index = sum(state[k] * strides[k])`` with ``strides[0] == 1``.
    """

    var_ids: tuple[str, ...]
    sizes: tuple[int, ...]
    q: sp.csr_matrix

    @property
    def strides(self) -> tuple[int, ...]:
        out, acc = [], 1
        for n in self.sizes:
            out.append(acc)
            acc *= n
        return tuple(out)

    @property
    def n(self) -> int:
        return int(np.prod(self.sizes, dtype=np.int64)) if self.sizes else 1

    def index_of(self, assignment: Mapping[str, int]) -> int:
        return int(sum(assignment[v] * s for v, s in zip(self.var_ids, self.strides)))

    def assignment_of(self, index: int) -> dict[str, int]:
        return {v: (index // s) % n for v, s, n in zip(self.var_ids, self.strides, self.sizes)}

    def digits(self, vid: str) -> np.ndarray:
        """State of ``vid`` in every joint state."""
        k = self.var_ids.index(vid)
        return (np.arange(self.n) // self.strides[k]) % self.sizes[k]

    def literal_mask(self, literals: Iterable[tuple[str, int]]) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        for vid, state in literals:
            mask &= self.digits(vid) == state
        return mask

    def initial_distribution(self, model: CtbnModel) -> np.ndarray:
        p = np.ones(1)
        for vid in reversed(self.var_ids):
            p = np.kron(p, np.asarray(model.initial[vid], dtype=float))
        return p


def chain_size(model: CtbnModel) -> int:
    return math.prod(v.size for v in model.variables if v.kind != "decision")


def amalgamate(model: CtbnModel, decision_assignment: Mapping[str, str] | None = None,
               cap: int = DEFAULT_STATE_CAP) -> JointGenerator:
    """Expand ``model`` into one sparse generator over the joint state space.

    Decision variables stay outside the state space; their assigned state
    selects the matrices of their children.
    """
    decision_assignment = dict(decision_assignment or {})
    fixed = {}
    for did in model.decision_ids:
        if did not in decision_assignment:
            raise RphmError(f"decision {did!r} is not assigned")
        fixed[did] = model.variable(did).state_index(decision_assignment[did])

    chain_ids = tuple(sorted(v.id for v in model.variables if v.kind != "decision"))
    sizes = tuple(model.variable(v).size for v in chain_ids)
    n = math.prod(sizes)
    if n > cap:
        raise CapacityError(f"joint state space needs {n} states, cap is {cap}", required=n)

    gen = JointGenerator(chain_ids, sizes, sp.csr_matrix((n, n)))
    idx = np.arange(n, dtype=np.int64)
    digit = {v: gen.digits(v) for v in chain_ids}
    rows, cols, vals = [], [], []
    for vid, stride in zip(chain_ids, gen.strides):
        cim = model.cims[vid]
        psizes = [model.variable(p).size for p in cim.parent_ids]
        stack = np.stack([cim.matrices[a] for a in parent_assignments(psizes)])
        key = np.zeros(n, dtype=np.int64)
        for p, size in zip(cim.parent_ids, psizes):
            key = key * size + (fixed[p] if p in fixed else digit[p])
        cur = digit[vid]
        k = model.variable(vid).size
        for j in range(k):
            rate = stack[key, cur, j]
            sel = (cur != j) & (rate != 0)
            rows.append(idx[sel])
            cols.append(idx[sel] + (j - cur[sel]) * stride)
            vals.append(rate[sel])
    rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    vals = np.concatenate(vals) if vals else np.zeros(0)
    off = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    q = (off - sp.diags(np.asarray(off.sum(axis=1)).ravel())).tocsr()
    q.sort_indices()
    return JointGenerator(chain_ids, sizes, q)


def ancestral_closure(model: CtbnModel, targets: Iterable[str]) -> set[str]:
    seen, stack = set(), list(targets)
    while stack:
        vid = stack.pop()
        if vid in seen:
            continue
        seen.add(vid)
        stack.extend(model.cims[vid].parent_ids)
    return seen


def relevant_variables(model: CtbnModel, targets: Iterable[str],
                       observed: Iterable[str] = ()) -> set[str]:
    """Variables that can influence ``targets`` given evidence on ``observed``.

    Non-ancestors carry no information forward in time, and connected
    components of the ancestral graph without any target are independent of
    the targets, so both are dropped.
    """
    targets = set(targets)
    closure = ancestral_closure(model, targets | set(observed))
    adjacency = {v: set() for v in closure}
    for p, c in model.edges:
        if p in closure and c in closure:
            adjacency[p].add(c)
            adjacency[c].add(p)
    keep, stack = set(), [t for t in targets if t in closure]
    while stack:
        vid = stack.pop()
        if vid in keep:
            continue
        keep.add(vid)
        stack.extend(adjacency[vid])
    return keep
