"""Probability and occupancy queries over CTBNs under test evidence.

Two engines answer every query:

``exact``
    Amalgamates the variables that can influence the query into one chain
    and runs uniformization.  Evidence is handled by a forward pass
    (observations up to the query time) combined with a backward likelihood
    pass (observations after it), so the answer is conditioned on all the
    evidence.  Interval observations kill probability mass that leaves the
    observed state.
``mc``
    Forward-samples trajectories and rejects those that contradict any
    observation.  This conditions on the same event as the exact engine.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from . import markov, sampling
from .composition import bind_scenario
from .ctbn import DEFAULT_STATE_CAP, CtbnModel, JointGenerator, amalgamate, relevant_variables
from .errors import EvidenceError, InferenceError, ParseError, RphmError

ENGINES = ("exact", "mc", "auto")
DEFAULT_SAMPLES = 100_000
DEFAULT_SEED = 42


@dataclass(frozen=True)
class PointObservation:
    var: str
    state: str
    t: float


@dataclass(frozen=True)
class IntervalObservation:
    var: str
    state: str
    t_start: float
    t_end: float


@dataclass(frozen=True)
class Evidence:
    items: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))

    @property
    def points(self) -> list[PointObservation]:
        return [i for i in self.items if isinstance(i, PointObservation)]

    @property
    def intervals(self) -> list[IntervalObservation]:
        return [i for i in self.items if isinstance(i, IntervalObservation)]

    @property
    def variables(self) -> set[str]:
        return {i.var for i in self.items}

    def last_time(self) -> float:
        times = [i.t for i in self.points] + [i.t_end for i in self.intervals]
        return max(times, default=0.0)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any] | None) -> "Evidence":
        data = data or {}
        try:
            items = [PointObservation(d["var"], str(d["state"]), float(d["t"]))
                     for d in data.get("point", [])]
            items += [IntervalObservation(d["var"], str(d["state"]), float(d["t_start"]),
                                          float(d["t_end"]))
                      for d in data.get("interval", [])]
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed evidence document: {exc!r}") from None
        return cls(items)

    def to_dict(self) -> dict:
        return {
            "point": [{"var": p.var, "state": p.state, "t": p.t} for p in self.points],
            "interval": [{"var": i.var, "state": i.state, "t_start": i.t_start, "t_end": i.t_end}
                         for i in self.intervals],
        }


def check_evidence(model: CtbnModel, evidence: Evidence) -> None:
    """Raise :class:`EvidenceError` for malformed or contradictory evidence."""
    spans: dict[str, list[tuple[float, float, int]]] = {}
    for item in evidence.items:
        if not model.has(item.var):
            raise EvidenceError(f"evidence on unknown variable {item.var!r}")
        var = model.variable(item.var)
        if var.kind == "decision":
            raise EvidenceError(f"decision {item.var!r} is fixed by the scenario, not by evidence")
        try:
            s = var.state_index(item.state)
        except RphmError as exc:
            raise EvidenceError(str(exc)) from None
        if isinstance(item, PointObservation):
            if not (item.t >= 0 and math.isfinite(item.t)):
                raise EvidenceError(f"observation time must be >= 0, got {item.t}")
            span = (item.t, item.t, s)
        else:
            if not (item.t_start >= 0 and math.isfinite(item.t_end)):
                raise EvidenceError("interval times must be finite and >= 0")
            if not item.t_start < item.t_end:
                raise EvidenceError(f"interval on {item.var!r} needs t_start < t_end")
            span = (item.t_start, item.t_end, s)
        for a, b, other in spans.get(item.var, []):
            if other != s and span[0] <= b and a <= span[1]:
                raise EvidenceError(f"conflicting observations on {item.var!r} near t={max(a, span[0])}")
        spans.setdefault(item.var, []).append(span)


@dataclass(frozen=True)
class Trajectory:
    """Piecewise-constant sample path of every variable up to ``horizon``."""

    initial: Mapping[str, str]
    transitions: tuple[tuple[float, str, str], ...]
    horizon: float

    def path(self, var: str) -> list[tuple[float, str]]:
        out = [(0.0, self.initial[var])]
        out += [(t, s) for t, v, s in self.transitions if v == var]
        return out

    def state_at(self, var: str, t: float) -> str:
        state = self.initial[var]
        for time, v, s in self.transitions:
            if time > t:
                break
            if v == var:
                state = s
        return state

    def to_dict(self) -> dict:
        return {"horizon": self.horizon,
                "initial": dict(sorted(self.initial.items())),
                "transitions": [{"t": t, "var": v, "state": s} for t, v, s in self.transitions]}


@dataclass(frozen=True)
class QueryResult:
    value: float
    std_error: float
    n_samples: int
    engine: str
    acceptance_rate: float = 1.0

    def to_dict(self) -> dict:
        return {"value": self.value, "std_error": self.std_error, "n_samples": self.n_samples,
                "engine": self.engine, "acceptance_rate": self.acceptance_rate}


def sample_trajectory(model: CtbnModel, decision_assignment, horizon: float, seed: int) -> Trajectory:
    """One forward sample of the bound model; identical for identical inputs."""
    if not horizon > 0:
        raise InferenceError("horizon must be positive")
    bound = bind_scenario(model, decision_assignment)
    cm = sampling.compile_model(bound)
    init, times, vars_, states = sampling.simulate_record(cm, int(seed), float(horizon))
    variables = [bound.variable(v) for v in cm.var_ids]
    return Trajectory(
        initial={var.id: var.states[s] for var, s in zip(variables, init)},
        transitions=tuple((float(t), variables[v].id, variables[v].states[s])
                          for t, v, s in zip(times, vars_, states)),
        horizon=float(horizon),
    )


# --- query preparation ----------------------------------------------------

Literal = tuple[str, str]


@dataclass
class Reward:
    """First-match rate clauses plus lump values on entering a state."""

    clauses: list[tuple[list[Literal], float]] = field(default_factory=list)
    impulses: list[tuple[str, str, float, list[Literal]]] = field(default_factory=list)


@dataclass
class _Prepared:
    model: CtbnModel
    evidence: Evidence


def _resolve(model: CtbnModel, literals: Iterable[Literal]) -> list[tuple[str, int]]:
    out = []
    for vid, state in literals:
        out.append((vid, model.variable(vid).state_index(state)))
    return out


def _prepare(model: CtbnModel, decisions, evidence: Evidence | None, targets: Iterable[str]) -> _Prepared:
    bound = bind_scenario(model, decisions)
    evidence = evidence or Evidence()
    check_evidence(bound, evidence)
    targets = set(targets)
    for vid in targets:
        bound.variable(vid)
    keep = relevant_variables(bound, targets, evidence.variables)
    sub = bound.subset(keep)
    kept_items = [i for i in evidence.items if i.var in keep]
    return _Prepared(sub, Evidence(kept_items))


def _choose_engine(engine: str, model: CtbnModel, cap: int) -> str:
    if engine not in ENGINES:
        raise InferenceError(f"unknown engine {engine!r}")
    if engine != "auto":
        return engine
    size = math.prod(v.size for v in model.variables)
    return "exact" if size <= cap else "mc"


# --- exact engine ---------------------------------------------------------

class _Timeline:
    """Forward/backward quantities at every breakpoint of the evidence."""

    def __init__(self, model: CtbnModel, evidence: Evidence, times: Iterable[float],
                 tol: float, cap: int):
        self.gen: JointGenerator = amalgamate(model, {}, cap=cap)
        self.tol = tol
        gen = self.gen
        resolved_points = [(gen.literal_mask([(p.var, model.variable(p.var).state_index(p.state))]), p.t)
                           for p in evidence.points]
        resolved_iv = [(gen.literal_mask([(i.var, model.variable(i.var).state_index(i.state))]),
                        i.t_start, i.t_end) for i in evidence.intervals]
        bps = {0.0} | {float(t) for t in times}
        bps |= {t for _, t in resolved_points}
        for _, a, b in resolved_iv:
            bps |= {a, b}
        self.bps = sorted(bps)
        nb = len(self.bps)
        n = gen.n
        # observation masks applied at each breakpoint (points and interval starts)
        self.obs = [None] * nb
        for mask, t in resolved_points + [(m, a) for m, a, _ in resolved_iv]:
            k = self.bps.index(t)
            self.obs[k] = mask if self.obs[k] is None else self.obs[k] & mask
        # kill masks on each segment [bps[k], bps[k+1]]
        self.seg_mask = [None] * max(nb - 1, 0)
        for k in range(nb - 1):
            lo, hi = self.bps[k], self.bps[k + 1]
            for mask, a, b in resolved_iv:
                if a <= lo and hi <= b:
                    cur = self.seg_mask[k]
                    self.seg_mask[k] = mask if cur is None else cur & mask
        self._props: dict = {}
        self._alpha = [gen.initial_distribution(model)]
        self._observe(0)

        # future_free[k]: nothing observed after bps[k] and no killing from segment k on
        self.future_free = [True] * nb
        free = True
        for k in range(nb - 1, -1, -1):
            self.future_free[k] = free
            if self.obs[k] is not None or (k > 0 and self.seg_mask[k - 1] is not None):
                free = False
        self.beta = [None] * nb
        beta = np.ones(n)
        for k in range(nb - 1, -1, -1):
            if k < nb - 1 and self.future_free[k]:
                beta = np.ones(n)  # no evidence ahead: the likelihood is flat
            elif k < nb - 1:
                nxt = beta if self.obs[k + 1] is None else beta * self.obs[k + 1]
                beta = self.prop(k).backward(nxt, self.bps[k + 1] - self.bps[k], tol)
                top = beta.max()
                if top > 0:
                    beta = beta / top
            self.beta[k] = beta

    def _observe(self, k: int) -> None:
        alpha = self._alpha[k]
        if self.obs[k] is not None:
            alpha = alpha * self.obs[k]
        z = alpha.sum()
        if not z > 0:
            raise EvidenceError(f"evidence has zero probability (at t={self.bps[k]})")
        self._alpha[k] = alpha / z

    def alpha(self, k: int) -> np.ndarray:
        """Filtered distribution at breakpoint ``k``, propagated on demand."""
        while len(self._alpha) <= k:
            j = len(self._alpha)
            self._alpha.append(self.prop(j - 1).forward(self._alpha[j - 1],
                                                        self.bps[j] - self.bps[j - 1], self.tol))
            self._observe(j)
        return self._alpha[k]

    def prop(self, k: int) -> markov.Uniformized:
        mask = self.seg_mask[k]
        key = None if mask is None else mask.tobytes()
        if key not in self._props:
            self._props[key] = markov.Uniformized(self.gen.q, mask)
        return self._props[key]

    def posterior(self, t: float) -> np.ndarray:
        k = self.bps.index(float(t))
        p = self.alpha(k) * self.beta[k]
        z = p.sum()
        if not z > 0:
            raise EvidenceError("evidence has zero probability")
        return p / z

    def integrate(self, horizon: float, vectors: Sequence[np.ndarray],
                  fluxes: Sequence[sp.spmatrix] = (), rtol: float = 1e-7) -> np.ndarray:
        """Integrals over [0, horizon] of posterior expectations.

        ``vectors`` are state weights; ``fluxes`` are sparse matrices whose
        entry (s, s') is a rate counted on the transition s -> s'.
        """
        flux_rows = [np.asarray(f.sum(axis=1)).ravel() for f in fluxes]
        total = np.zeros(len(vectors) + len(fluxes))
        for k in range(len(self.bps) - 1):
            lo, hi = self.bps[k], min(self.bps[k + 1], horizon)
            if hi <= lo:
                break
            if self.future_free[k]:
                # nothing observed from here on: one closed-form integral to the horizon
                occ = self.prop(k).integrate_forward(self.alpha(k), horizon - lo, self.tol * 1e-3)
                total += [occ @ v for v in vectors] + [occ @ f for f in flux_rows]
                break
            total += self._quadrature(k, lo, hi, vectors, fluxes, rtol)
        return total

    def _quadrature(self, k, lo, hi, vectors, fluxes, rtol):
        prop = self.prop(k)
        end = self.bps[k + 1]
        beta_end = self.beta[k + 1] if self.obs[k + 1] is None else self.beta[k + 1] * self.obs[k + 1]
        z = float(self.alpha(k) @ prop.backward(beta_end, end - lo, self.tol))
        scale = max([1.0] + [float(np.max(np.abs(v))) for v in vectors]
                    + [float(abs(f).sum(axis=1).max()) for f in fluxes])
        atol = rtol * (hi - lo) * scale

        def evaluate(panels):
            xs, ws = markov.panel_nodes(lo, hi, panels)
            alphas, a, t_prev = [], self.alpha(k), lo
            for x in xs:
                a = prop.forward(a, x - t_prev, self.tol)
                t_prev = x
                alphas.append(a)
            betas, b, t_prev = [None] * len(xs), beta_end, end
            for i in range(len(xs) - 1, -1, -1):
                b = prop.backward(b, t_prev - xs[i], self.tol)
                t_prev = xs[i]
                betas[i] = b
            out = np.zeros(len(vectors) + len(fluxes))
            for w, a, b in zip(ws, alphas, betas):
                vals = [a @ (v * b) for v in vectors] + [a @ (f @ b) for f in fluxes]
                out += w * np.array(vals) / z
            return out

        panels = 1
        coarse = evaluate(panels)
        for _ in range(8):
            panels *= 2
            fine = evaluate(panels)
            if markov.is_close_enough(coarse, fine, atol):
                return fine
            coarse = fine
        return coarse


def _exact_state_probability(prep: _Prepared, literals, t, tol, cap) -> float:
    tl = _Timeline(prep.model, prep.evidence, [t], tol, cap)
    mask = tl.gen.literal_mask(_resolve(prep.model, literals))
    return float(np.clip(tl.posterior(t)[mask].sum(), 0.0, 1.0))


def _reward_arrays(gen: JointGenerator, model: CtbnModel, reward: Reward):
    rate = np.zeros(gen.n)
    unset = np.ones(gen.n, dtype=bool)
    for lits, r in reward.clauses:
        hit = gen.literal_mask(_resolve(model, lits)) & unset
        rate[hit] = r
        unset &= ~hit
    fluxes = []
    if reward.impulses:
        coo = gen.q.tocoo()
        off = coo.row != coo.col
        rows, cols, vals = coo.row[off], coo.col[off], coo.data[off]
        for vid, state, value, lits in reward.impulses:
            s = model.variable(vid).state_index(state)
            digit = gen.digits(vid)
            cond = gen.literal_mask(_resolve(model, lits))
            sel = (digit[rows] != s) & (digit[cols] == s) & cond[cols]
            fluxes.append(sp.csr_matrix((vals[sel] * value, (rows[sel], cols[sel])),
                                        shape=(gen.n, gen.n)))
    return rate, fluxes


def _exact_reward(prep: _Prepared, reward: Reward, horizon, tol, cap) -> float:
    tl = _Timeline(prep.model, prep.evidence, [horizon], tol, cap)
    rate, fluxes = _reward_arrays(tl.gen, prep.model, reward)
    parts = tl.integrate(horizon, [rate], fluxes)
    return float(parts.sum())


# --- Monte Carlo engine ---------------------------------------------------

def _mc_observables(prep: _Prepared, cm: sampling.CompiledModel, t_end, reward=None,
                    horizon=0.0, snapshot=None):
    model = prep.model

    def idx(lits):
        return [(cm.index(v), s) for v, s in _resolve(model, lits)]

    points = [(cm.index(p.var), model.variable(p.var).state_index(p.state), p.t)
              for p in prep.evidence.points]
    intervals = [(cm.index(i.var), model.variable(i.var).state_index(i.state), i.t_start, i.t_end)
                 for i in prep.evidence.intervals]
    clauses, impulses = [], []
    if reward is not None:
        clauses = [(idx(lits), r) for lits, r in reward.clauses]
        impulses = [(cm.index(v), model.variable(v).state_index(s), value, idx(lits))
                    for v, s, value, lits in reward.impulses]
    snap = None if snapshot is None else (snapshot[0], idx(snapshot[1]))
    t_end = max(t_end, prep.evidence.last_time())
    return sampling.make_observables(t_end, points, intervals, clauses, horizon, impulses, snap)


def _mc_run(prep, obs, samples, seed, workers):
    if samples < 1:
        raise InferenceError("mc_samples must be positive")
    cm = sampling.compile_model(prep.model)
    accepted, reward, snap = sampling.run_batch(cm, obs, samples, seed, workers)
    n_acc = int(accepted.sum())
    if n_acc == 0:
        raise InferenceError("evidence too unlikely for rejection sampling")
    return accepted, reward, snap, n_acc


def _mc_state_probability(prep, literals, t, samples, seed, workers) -> QueryResult:
    cm = sampling.compile_model(prep.model)
    obs = _mc_observables(prep, cm, t, snapshot=(t, literals))
    accepted, _, snap, n_acc = _mc_run(prep, obs, samples, seed, workers)
    p = float(snap[accepted].mean())
    return QueryResult(p, math.sqrt(p * (1 - p) / n_acc), samples, "mc", n_acc / samples)


def _mc_reward(prep, reward, horizon, samples, seed, workers) -> QueryResult:
    cm = sampling.compile_model(prep.model)
    obs = _mc_observables(prep, cm, horizon, reward=reward, horizon=horizon)
    accepted, values, _, n_acc = _mc_run(prep, obs, samples, seed, workers)
    vals = values[accepted]
    se = float(vals.std(ddof=1) / math.sqrt(n_acc)) if n_acc > 1 else 0.0
    return QueryResult(float(vals.mean()), se, samples, "mc", n_acc / samples)


# --- public queries -------------------------------------------------------

def query_state_probability(model: CtbnModel, decisions, evidence: Evidence | None,
                            variable: str, state, t: float, engine: str = "exact",
                            mc_samples: int = DEFAULT_SAMPLES, seed: int = DEFAULT_SEED,
                            tol: float = markov.DEFAULT_TOL, cap: int = DEFAULT_STATE_CAP,
                            workers: int = 1) -> QueryResult:
    """P(variable = state at time t | evidence) under a decision assignment."""
    return query_condition_probability(model, decisions, evidence, [(variable, state)], t,
                                       engine, mc_samples, seed, tol, cap, workers)


def query_condition_probability(model, decisions, evidence, condition: Sequence[Literal], t,
                                engine="exact", mc_samples=DEFAULT_SAMPLES, seed=DEFAULT_SEED,
                                tol=markov.DEFAULT_TOL, cap=DEFAULT_STATE_CAP, workers=1):
    if not (t >= 0 and math.isfinite(t)):
        raise InferenceError("query time must be finite and >= 0")
    prep = _prepare(model, decisions, evidence, [v for v, _ in condition])
    engine = _choose_engine(engine, prep.model, cap)
    if engine == "exact":
        value = _exact_state_probability(prep, condition, float(t), tol, cap)
        return QueryResult(value, 0.0, 0, "exact")
    return _mc_state_probability(prep, condition, float(t), mc_samples, seed, workers)


def expected_reward(model: CtbnModel, decisions, evidence: Evidence | None, reward: Reward,
                    horizon: float, engine: str = "exact", mc_samples: int = DEFAULT_SAMPLES,
                    seed: int = DEFAULT_SEED, tol: float = markov.DEFAULT_TOL,
                    cap: int = DEFAULT_STATE_CAP, workers: int = 1) -> QueryResult:
    """E[integral_0^H rate(X(t)) dt + sum of impulses | evidence]."""
    if not (horizon > 0 and math.isfinite(horizon)):
        raise InferenceError("horizon must be positive")
    targets = {v for lits, _ in reward.clauses for v, _ in lits}
    targets |= {v for v, _, _, lits in reward.impulses} | {v for *_, lits in reward.impulses
                                                             for v, _ in lits}
    prep = _prepare(model, decisions, evidence, targets)
    if not targets:
        rate = next((r for lits, r in reward.clauses if not lits), 0.0)
        engine = "exact" if engine == "auto" else engine
        return QueryResult(rate * horizon, 0.0, 0 if engine == "exact" else mc_samples, engine)
    engine = _choose_engine(engine, prep.model, cap)
    if engine == "exact":
        return QueryResult(_exact_reward(prep, reward, float(horizon), tol, cap), 0.0, 0, "exact")
    return _mc_reward(prep, reward, float(horizon), mc_samples, seed, workers)


def expected_occupancy(model: CtbnModel, decisions, evidence: Evidence | None,
                       condition: Sequence[Literal], horizon: float, engine: str = "exact",
                       mc_samples: int = DEFAULT_SAMPLES, seed: int = DEFAULT_SEED,
                       tol: float = markov.DEFAULT_TOL, cap: int = DEFAULT_STATE_CAP,
                       workers: int = 1) -> QueryResult:
    """Expected hours in [0, horizon] during which every literal holds."""
    return expected_reward(model, decisions, evidence, Reward([(list(condition), 1.0)]),
                           horizon, engine, mc_samples, seed, tol, cap, workers)


def probability_curve(model: CtbnModel, decisions, variable: str, state, times: Sequence[float],
                      tol: float = markov.DEFAULT_TOL, cap: int = DEFAULT_STATE_CAP) -> np.ndarray:
    """Unconditioned P(variable = state) on an increasing time grid (exact)."""
    prep = _prepare(model, decisions, None, [variable])
    gen = amalgamate(prep.model, {}, cap=cap)
    mask = gen.literal_mask(_resolve(prep.model, [(variable, state)]))
    prop = markov.Uniformized(gen.q)
    p, t_prev, out = gen.initial_distribution(prep.model), 0.0, []
    for t in times:
        p = prop.forward(p, t - t_prev, tol)
        p = p / p.sum()
        t_prev = t
        out.append(float(p[mask].sum()))
    return np.array(out)


def exact_joint_distribution(model: CtbnModel, decisions, evidence: Evidence | None,
                             t: float, tol: float = markov.DEFAULT_TOL,
                             cap: int = DEFAULT_STATE_CAP):
    """Posterior over the joint state of every non-decision variable at ``t``."""
    bound = bind_scenario(model, decisions)
    evidence = evidence or Evidence()
    check_evidence(bound, evidence)
    tl = _Timeline(bound, evidence, [t], tol, cap)
    return tl.gen, tl.posterior(t)
