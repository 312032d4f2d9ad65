"""Forward sampling of CTBN trajectories.

Random numbers come from a counter-based generator: draw ``c`` of the
trajectory with key ``k`` is ``splitmix64(k ^ splitmix64(c))``.  Trajectory
``i`` of a Monte Carlo run with master seed ``s`` uses the seed
``trajectory_seed(s, i)``, so results do not depend on batching, worker
count or execution order.

The simulation is the competing-clocks process: every variable holds an
exponential clock with the exit rate of its current conditional intensity
row and the earliest clock fires.  Clocks are memoryless, so redrawing all
of them after each transition (the direct method used here) gives the same
law as keeping unaffected clocks running.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from .ctbn import CtbnModel, parent_assignments

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0
_MASK64 = (1 << 64) - 1


@numba.njit(cache=True)
def _mix(x):
    z = x + _GOLDEN
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@numba.njit(cache=True)
def _uniform(key, counter):
    z = _mix(key ^ _mix(np.uint64(counter)))
    return (float(z >> _S11) + 0.5) * _INV53


def _py_mix(x: int) -> int:
    z = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def trajectory_seed(master_seed: int, index: int) -> int:
    """64-bit seed of trajectory ``index`` under ``master_seed``."""
    return _py_mix((master_seed & _MASK64) ^ _py_mix((index * 0xD1B54A32D192ED03) & _MASK64))


@dataclass(frozen=True)
class CompiledModel:
    """Flat arrays describing a decision-free model for the sampler."""

    var_ids: tuple[str, ...]
    n_states: np.ndarray
    par_ptr: np.ndarray
    par_var: np.ndarray
    par_size: np.ndarray
    tab_ptr: np.ndarray
    rates: np.ndarray
    init_ptr: np.ndarray
    init_cdf: np.ndarray

    def index(self, vid: str) -> int:
        return self.var_ids.index(vid)


def compile_model(model: CtbnModel) -> CompiledModel:
    if model.decision_ids:
        raise ValueError("bind decisions before sampling")
    var_ids = tuple(sorted(model.ids))
    pos = {v: i for i, v in enumerate(var_ids)}
    n_states, par_ptr, par_var, par_size = [], [0], [], []
    tab_ptr, tables, init_ptr, init_cdf = [0], [], [0], []
    for vid in var_ids:
        var = model.variable(vid)
        cim = model.cims[vid]
        sizes = [model.variable(p).size for p in cim.parent_ids]
        n_states.append(var.size)
        par_var.extend(pos[p] for p in cim.parent_ids)
        par_size.extend(sizes)
        par_ptr.append(len(par_var))
        stack = np.stack([cim.matrices[a] for a in parent_assignments(sizes)])
        tables.append(stack.ravel())
        tab_ptr.append(tab_ptr[-1] + stack.size)
        cdf = np.cumsum(np.asarray(model.initial[vid], dtype=float))
        cdf[-1] = max(cdf[-1], 1.0)
        init_cdf.extend(cdf)
        init_ptr.append(len(init_cdf))
    return CompiledModel(
        var_ids=var_ids,
        n_states=np.array(n_states, dtype=np.int64),
        par_ptr=np.array(par_ptr, dtype=np.int64),
        par_var=np.array(par_var, dtype=np.int64),
        par_size=np.array(par_size, dtype=np.int64),
        tab_ptr=np.array(tab_ptr, dtype=np.int64),
        rates=np.concatenate(tables) if tables else np.zeros(0),
        init_ptr=np.array(init_ptr, dtype=np.int64),
        init_cdf=np.array(init_cdf, dtype=float),
    )


@dataclass
class Observables:
    """What a batch run checks and accumulates per trajectory.

    Literal groups are conjunctions stored CSR-style: group ``g`` owns
    literals ``ptr[g]:ptr[g+1]`` of ``(var, state)``.
    """

    t_end: float
    pt_var: np.ndarray
    pt_state: np.ndarray
    pt_time: np.ndarray
    iv_var: np.ndarray
    iv_state: np.ndarray
    iv_start: np.ndarray
    iv_end: np.ndarray
    cl_ptr: np.ndarray
    cl_var: np.ndarray
    cl_state: np.ndarray
    cl_rate: np.ndarray
    horizon: float
    im_var: np.ndarray
    im_state: np.ndarray
    im_value: np.ndarray
    im_ptr: np.ndarray
    im_lvar: np.ndarray
    im_lstate: np.ndarray
    snap_time: float
    snap_var: np.ndarray
    snap_state: np.ndarray

    def args(self):
        return (self.t_end, self.pt_var, self.pt_state, self.pt_time, self.iv_var, self.iv_state,
                self.iv_start, self.iv_end, self.cl_ptr, self.cl_var, self.cl_state, self.cl_rate,
                self.horizon, self.im_var, self.im_state, self.im_value, self.im_ptr, self.im_lvar,
                self.im_lstate, self.snap_time, self.snap_var, self.snap_state)


def _ints(xs):
    return np.array(list(xs), dtype=np.int64)


def _floats(xs):
    return np.array(list(xs), dtype=float)


def make_observables(t_end, points=(), intervals=(), clauses=(), horizon=0.0,
                     impulses=(), snapshot=None) -> Observables:
    """Build sampler observables from index-level descriptions.

    points: (var, state, t); intervals: (var, state, start, end);
    clauses: (literals, rate) evaluated first-match; impulses:
    (var, state, value, literals); snapshot: (t, literals) or None.
    """
    cl_ptr, cl_var, cl_state, cl_rate = [0], [], [], []
    for lits, rate in clauses:
        for v, s in lits:
            cl_var.append(v)
            cl_state.append(s)
        cl_ptr.append(len(cl_var))
        cl_rate.append(rate)
    im_ptr, im_lvar, im_lstate = [0], [], []
    for _, _, _, lits in impulses:
        for v, s in lits:
            im_lvar.append(v)
            im_lstate.append(s)
        im_ptr.append(len(im_lvar))
    snap_t, snap_lits = (-1.0, []) if snapshot is None else snapshot
    return Observables(
        t_end=float(t_end),
        pt_var=_ints(p[0] for p in points), pt_state=_ints(p[1] for p in points),
        pt_time=_floats(p[2] for p in points),
        iv_var=_ints(i[0] for i in intervals), iv_state=_ints(i[1] for i in intervals),
        iv_start=_floats(i[2] for i in intervals), iv_end=_floats(i[3] for i in intervals),
        cl_ptr=_ints(cl_ptr), cl_var=_ints(cl_var), cl_state=_ints(cl_state),
        cl_rate=_floats(cl_rate), horizon=float(horizon),
        im_var=_ints(i[0] for i in impulses), im_state=_ints(i[1] for i in impulses),
        im_value=_floats(i[2] for i in impulses), im_ptr=_ints(im_ptr),
        im_lvar=_ints(im_lvar), im_lstate=_ints(im_lstate),
        snap_time=float(snap_t), snap_var=_ints(v for v, _ in snap_lits),
        snap_state=_ints(s for _, s in snap_lits),
    )


@numba.njit(cache=True)
def _row_rates(v, state, par_ptr, par_var, par_size, tab_ptr, rates, n_states):
    key = 0
    for p in range(par_ptr[v], par_ptr[v + 1]):
        key = key * par_size[p] + state[par_var[p]]
    k = n_states[v]
    return tab_ptr[v] + (key * k + state[v]) * k


@numba.njit(cache=True)
def _holds(state, lvar, lstate, lo, hi):
    for i in range(lo, hi):
        if state[lvar[i]] != lstate[i]:
            return False
    return True


@numba.njit(cache=True, nogil=True)
def _simulate(key, n_states, par_ptr, par_var, par_size, tab_ptr, rates, init_ptr, init_cdf,
              t_end, pt_var, pt_state, pt_time, iv_var, iv_state, iv_start, iv_end,
              cl_ptr, cl_var, cl_state, cl_rate, horizon,
              im_var, im_state, im_value, im_ptr, im_lvar, im_lstate,
              snap_time, snap_var, snap_state,
              rec_time, rec_var, rec_state, init_out):
    """One trajectory.  Returns (accepted, reward, snapshot, n_events)."""
    nv = n_states.shape[0]
    state = np.zeros(nv, dtype=np.int64)
    exits = np.zeros(nv)
    counter = 0
    for v in range(nv):
        u = _uniform(key, counter)
        counter += 1
        s = 0
        while s < n_states[v] - 1 and init_cdf[init_ptr[v] + s] < u:
            s += 1
        state[v] = s
        if init_out.shape[0] > 0:
            init_out[v] = s
    t = 0.0
    reward = 0.0
    snap = 0.0
    n_events = 0
    n_clauses = cl_rate.shape[0]
    while True:
        total = 0.0
        for v in range(nv):
            base = _row_rates(v, state, par_ptr, par_var, par_size, tab_ptr, rates, n_states)
            k = n_states[v]
            r = 0.0
            for j in range(k):
                if j != state[v]:
                    r += rates[base + j]
            exits[v] = r
            total += r
        if total > 0.0:
            u = _uniform(key, counter)
            counter += 1
            t_next = t - math.log(u) / total
        else:
            t_next = math.inf

        for i in range(pt_var.shape[0]):
            if t <= pt_time[i] < t_next and state[pt_var[i]] != pt_state[i]:
                return False, reward, snap, n_events
        for i in range(iv_var.shape[0]):
            if t <= iv_end[i] and t_next > iv_start[i] and state[iv_var[i]] != iv_state[i]:
                return False, reward, snap, n_events
        if snap_time >= 0.0 and t <= snap_time < t_next:
            snap = 1.0 if _holds(state, snap_var, snap_state, 0, snap_var.shape[0]) else 0.0
        if n_clauses > 0 and t < horizon:
            dt = min(t_next, horizon) - t
            for c in range(n_clauses):
                if _holds(state, cl_var, cl_state, cl_ptr[c], cl_ptr[c + 1]):
                    reward += cl_rate[c] * dt
                    break

        if t_next >= t_end:
            return True, reward, snap, n_events

        u = _uniform(key, counter) * total
        counter += 1
        v = 0
        acc = exits[0]
        while acc < u and v < nv - 1:
            v += 1
            acc += exits[v]
        while exits[v] == 0.0:
            v -= 1
        base = _row_rates(v, state, par_ptr, par_var, par_size, tab_ptr, rates, n_states)
        u = _uniform(key, counter) * exits[v]
        counter += 1
        k = n_states[v]
        target = -1
        acc = 0.0
        for j in range(k):
            if j != state[v] and rates[base + j] > 0.0:
                target = j
                acc += rates[base + j]
                if acc >= u:
                    break
        state[v] = target
        t = t_next
        if n_events < rec_time.shape[0]:
            rec_time[n_events] = t
            rec_var[n_events] = v
            rec_state[n_events] = target
        n_events += 1
        if t <= horizon:
            for i in range(im_var.shape[0]):
                if im_var[i] == v and im_state[i] == target and _holds(
                        state, im_lvar, im_lstate, im_ptr[i], im_ptr[i + 1]):
                    reward += im_value[i]


@numba.njit(cache=True, nogil=True)
def _run_batch(keys, n_states, par_ptr, par_var, par_size, tab_ptr, rates, init_ptr, init_cdf,
               t_end, pt_var, pt_state, pt_time, iv_var, iv_state, iv_start, iv_end,
               cl_ptr, cl_var, cl_state, cl_rate, horizon,
               im_var, im_state, im_value, im_ptr, im_lvar, im_lstate,
               snap_time, snap_var, snap_state):
    n = keys.shape[0]
    accepted = np.zeros(n, dtype=np.bool_)
    reward = np.zeros(n)
    snap = np.zeros(n)
    no_t = np.zeros(0)
    no_i = np.zeros(0, dtype=np.int64)
    for i in range(n):
        a, r, s, _ = _simulate(keys[i], n_states, par_ptr, par_var, par_size, tab_ptr, rates,
                               init_ptr, init_cdf, t_end, pt_var, pt_state, pt_time,
                               iv_var, iv_state, iv_start, iv_end, cl_ptr, cl_var, cl_state,
                               cl_rate, horizon, im_var, im_state, im_value, im_ptr, im_lvar,
                               im_lstate, snap_time, snap_var, snap_state,
                               no_t, no_i, no_i, no_i)
        accepted[i] = a
        reward[i] = r
        snap[i] = s
    return accepted, reward, snap


def _model_args(cm: CompiledModel):
    return (cm.n_states, cm.par_ptr, cm.par_var, cm.par_size, cm.tab_ptr, cm.rates,
            cm.init_ptr, cm.init_cdf)


def trajectory_keys(master_seed: int, start: int, stop: int) -> np.ndarray:
    return np.array([_py_mix(trajectory_seed(master_seed, i)) for i in range(start, stop)],
                    dtype=np.uint64)


def run_batch(cm: CompiledModel, obs: Observables, n_samples: int, seed: int,
              workers: int = 1):
    """Per-trajectory (accepted, reward, snapshot) arrays for ``n_samples`` runs."""
    keys = trajectory_keys(seed, 0, n_samples)
    margs, oargs = _model_args(cm), obs.args()
    if workers <= 1 or n_samples < 2 * workers:
        return _run_batch(keys, *margs, *oargs)
    chunks = np.array_split(keys, workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda ks: _run_batch(ks, *margs, *oargs), chunks))
    return tuple(np.concatenate([p[j] for p in parts]) for j in range(3))


def simulate_record(cm: CompiledModel, seed: int, horizon: float):
    """Initial states and transition records of one trajectory."""
    obs = make_observables(horizon)
    key = np.uint64(_py_mix(seed & _MASK64))
    capacity = 1024
    while True:
        rec_t = np.zeros(capacity)
        rec_v = np.zeros(capacity, dtype=np.int64)
        rec_s = np.zeros(capacity, dtype=np.int64)
        init = np.zeros(len(cm.var_ids), dtype=np.int64)
        _, _, _, n = _simulate(key, *_model_args(cm), *obs.args(), rec_t, rec_v, rec_s, init)
        if n <= capacity:
            return init, rec_t[:n], rec_v[:n], rec_s[:n]
        capacity = n
