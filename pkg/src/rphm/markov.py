"""Uniformization for transient analysis of finite Markov chains.

All routines work on a sparse generator ``Q`` and optionally a 0/1 mask of
allowed states.  A mask kills probability mass that leaves the allowed set,
which is exactly conditioning on "the chain stayed inside the set".
"""
from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp
from scipy.stats import poisson

from .errors import InferenceError

DEFAULT_TOL = 1e-9


def poisson_window(mean: float, tol: float) -> tuple[int, int]:
    """Indices ``[left, right]`` whose Poisson mass misses at most ``tol``.

    The tolerance is split evenly between the two tails.
    """
    if mean <= 0:
        return 0, 0
    half = tol / 2.0
    left = int(poisson.ppf(half, mean))
    while left > 0 and poisson.cdf(left - 1, mean) > half:
        left -= 1
    right = int(poisson.isf(half, mean))
    while poisson.sf(right, mean) > half:
        right += 1
    return max(left, 0), max(right, left)


class Uniformized:
    """Precomputed ``P = I + Q / rate`` for repeated propagation."""

    def __init__(self, q: sp.spmatrix, mask: np.ndarray | None = None):
        q = sp.csr_matrix(q)
        if q.nnz and not np.all(np.isfinite(q.data)):
            raise InferenceError("generator has non-finite rates")
        self.n = q.shape[0]
        self.rate = float(np.max(-q.diagonal())) if self.n else 0.0
        self.mask = None if mask is None else np.asarray(mask, dtype=float)
        if self.rate > 0:
            p = sp.identity(self.n, format="csr") + q / self.rate
            self.p = p.tocsr()
            self.pt = p.T.tocsr()
        else:
            self.p = self.pt = None

    def _step_forward(self, v):
        v = self.pt @ v
        return v * self.mask if self.mask is not None else v

    def _step_backward(self, b):
        if self.mask is not None:
            b = b * self.mask
        b = self.p @ b
        return b * self.mask if self.mask is not None else b

    def forward(self, v: np.ndarray, t: float, tol: float = DEFAULT_TOL) -> np.ndarray:
        """Row vector ``v`` times ``exp(Q t)`` (killed outside the mask)."""
        v = np.asarray(v, dtype=float)
        if self.mask is not None:
            v = v * self.mask
        if t == 0 or self.rate == 0:
            return v.copy()
        return self._series(v, t, tol, self._step_forward)

    def backward(self, b: np.ndarray, t: float, tol: float = DEFAULT_TOL) -> np.ndarray:
        """``exp(Q t)`` times column vector ``b`` (killed outside the mask)."""
        b = np.asarray(b, dtype=float)
        if self.mask is not None:
            b = b * self.mask
        if t == 0 or self.rate == 0:
            return b.copy()
        return self._series(b, t, tol, self._step_backward)

    def _series(self, v, t, tol, step):
        mean = self.rate * t
        left, right = poisson_window(mean, tol)
        ks = np.arange(left, right + 1)
        weights = poisson.pmf(ks, mean)
        weights /= weights.sum()
        out = np.zeros_like(v)
        term = v
        for k in range(right + 1):
            if k >= left:
                out += weights[k - left] * term
            if k < right:
                term = step(term)
        return out

    def integrate_forward(self, v: np.ndarray, t: float, tol: float = DEFAULT_TOL) -> np.ndarray:
        """``integral_0^t v exp(Q s) ds`` for an unmasked chain.

        Uses ``(1/rate) * sum_k v P^k * Pr[N > k]`` with ``N ~ Poisson(rate t)``;
        the discarded tail is bounded by ``t * Pr[N >= K]``.
        """
        v = np.asarray(v, dtype=float)
        if self.mask is not None:
            raise InferenceError("closed-form integration needs an unmasked chain")
        if t == 0:
            return np.zeros_like(v)
        if self.rate == 0:
            return v * t
        mean = self.rate * t
        k_max = int(poisson.isf(tol, mean)) + 1
        while poisson.sf(k_max - 1, mean) > tol:
            k_max += 1
        sf = poisson.sf(np.arange(k_max + 1), mean)
        out = np.zeros_like(v)
        term = v
        for k in range(k_max + 1):
            out += sf[k] * term
            if k < k_max:
                term = self.pt @ term
        return out / self.rate


def transient_distribution(q: sp.spmatrix, init: np.ndarray, t: float,
                           tol: float = DEFAULT_TOL) -> np.ndarray:
    """Distribution at time ``t`` of the chain started from ``init``."""
    if t < 0:
        raise InferenceError("time must be non-negative")
    init = np.asarray(init, dtype=float)
    if abs(init.sum() - 1.0) > 1e-9:
        raise InferenceError("initial distribution must sum to 1")
    out = Uniformized(q).forward(init, t, tol)
    return out / out.sum()


def gauss_legendre(a: float, b: float, order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(order)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def panel_nodes(a: float, b: float, panels: int, order: int = 8):
    edges = np.linspace(a, b, panels + 1)
    xs, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        x, w = gauss_legendre(lo, hi, order)
        xs.append(x)
        ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


def is_close_enough(a: np.ndarray, b: np.ndarray, atol: float) -> bool:
    return bool(np.all(np.abs(np.asarray(a) - np.asarray(b)) <= atol)) and math.isfinite(float(np.sum(a)))
