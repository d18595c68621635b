"""Entropy-regularized Wasserstein barycenters.

For measures ``p_1..p_m`` with costs ``C_l`` and weights ``w`` the dual is

    phi(u, v) = gamma * sum_l w_l (log 1^T B_l(u_l, v_l) 1 - <u_l, p_l>) - m gamma

minimized subject to ``sum_l w_l v_l = 0``. Exact minimization over ``u`` or
over ``v`` is one half of an iterative Bregman projection (IBP) sweep. The
accelerated variant runs the adaptive primal-dual method over the two blocks,
keeping every dual point on the constraint subspace by projecting the
v-part of the gradient.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .aam import StoppingRule
from .core import (Histogram, LogKernel, as_cost, as_histogram, log_marginals,
                   log_plan)
from .ot import TransportPlan
from .pdaam import LinearlyConstrainedProblem, PrimalDualState, pdaam_step, run_pdaam
from .trace import ConvergenceTrace, TraceRow


@dataclass(frozen=True)
class BarycenterProblem:
    measures: tuple
    costs: tuple
    weights: np.ndarray
    gamma: float
    kernels: tuple = field(init=False, repr=False)

    def __post_init__(self):
        measures = tuple(as_histogram(p) for p in self.measures)
        if not measures:
            raise ValueError("need at least one measure")
        n = len(measures[0])
        if any(len(p) != n for p in measures):
            raise ValueError("measures must share one length")
        for p in measures:
            if np.any(p.weights <= 0):
                raise ValueError("measures must be strictly positive; smooth them first")
        costs = self.costs
        if not isinstance(costs, (list, tuple)):
            costs = [costs] * len(measures)
        costs = tuple(as_cost(C) for C in costs)
        if len(costs) != len(measures) or any(C.shape != (n, n) for C in costs):
            raise ValueError("need one N x N cost per measure")
        w = np.array(self.weights, dtype=float).ravel()
        if w.size != len(measures):
            raise ValueError("need one weight per measure")
        if np.any(w <= 0):
            raise ValueError("weights must be strictly positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        w.setflags(write=False)
        object.__setattr__(self, "measures", measures)
        object.__setattr__(self, "costs", costs)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "kernels",
                           tuple(LogKernel.from_cost(C, self.gamma) for C in costs))

    @property
    def m(self) -> int:
        return len(self.measures)

    @property
    def n(self) -> int:
        return len(self.measures[0])

    @property
    def P(self) -> np.ndarray:
        return np.stack([p.weights for p in self.measures])


@dataclass
class BarycenterDualPoint:
    """``u`` and ``v`` as ``(m, N)`` arrays."""

    u: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, m: int, n: int) -> "BarycenterDualPoint":
        return cls(np.zeros((m, n)), np.zeros((m, n)))

    @classmethod
    def from_flat(cls, lam, m: int) -> "BarycenterDualPoint":
        lam = np.asarray(lam, dtype=float)
        half = lam.size // 2
        return cls(lam[:half].reshape(m, -1).copy(), lam[half:].reshape(m, -1).copy())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.u.ravel(), self.v.ravel()])

    def constraint_violation(self, w) -> float:
        return float(np.abs(np.asarray(w) @ self.v).max())


@dataclass
class WBGradient:
    g_u: np.ndarray
    g_v: np.ndarray
    projected: bool = True

    def flat(self) -> np.ndarray:
        return np.concatenate([self.g_u.ravel(), self.g_v.ravel()])


def _project_v(v, w):
    """Euclidean projection of the stacked ``v`` onto ``sum_l w_l v_l = 0``."""
    return v - np.outer(w, (w @ v) / (w @ w))


def _marginals(prob: BarycenterProblem, u, v):
    out = [log_marginals(K, u[l], v[l]) for l, K in enumerate(prob.kernels)]
    rows = np.stack([o[0] for o in out])
    cols = np.stack([o[1] for o in out])
    totals = np.array([o[2] for o in out])
    return rows, cols, totals


def _value(prob, u, totals):
    w, g = prob.weights, prob.gamma
    return float(g * (w @ (totals - np.sum(u * prob.P, axis=1))) - prob.m * g)


def _gradient(prob, rows, cols, totals):
    w, g = prob.weights, prob.gamma
    g_u = g * w[:, None] * (np.exp(rows - totals[:, None]) - prob.P)
    g_v = g * w[:, None] * np.exp(cols - totals[:, None])
    return g_u, _project_v(g_v, w)


def wb_dual_value(prob: BarycenterProblem, p: BarycenterDualPoint) -> float:
    _, _, totals = _marginals(prob, p.u, p.v)
    return _value(prob, p.u, totals)


def wb_dual_gradient(prob: BarycenterProblem, p: BarycenterDualPoint) -> WBGradient:
    """Gradient with the v-part projected onto the constraint subspace."""
    g_u, g_v = _gradient(prob, *_marginals(prob, p.u, p.v))
    return WBGradient(g_u, g_v, projected=True)


def _u_step(prob, u, rows):
    return u + np.log(prob.P) - rows


def _v_step(prob, v, cols):
    return v + (prob.weights @ cols)[None, :] - cols


def ibp_u_update(prob: BarycenterProblem, p: BarycenterDualPoint) -> BarycenterDualPoint:
    """Exact minimization over ``u``: each plan's row marginal becomes ``p_l``."""
    rows, _, _ = _marginals(prob, p.u, p.v)
    return BarycenterDualPoint(_u_step(prob, p.u, rows), p.v.copy())


def ibp_v_update(prob: BarycenterProblem, p: BarycenterDualPoint) -> BarycenterDualPoint:
    """Exact minimization over ``v`` on the constraint subspace.

    All column sums become the w-weighted geometric mean of the current
    ones, so the normalized column marginals coincide across ``l``.
    """
    _, cols, _ = _marginals(prob, p.u, p.v)
    return BarycenterDualPoint(p.u.copy(), _v_step(prob, p.v, cols))


def plans_from_dual(prob: BarycenterProblem, p: BarycenterDualPoint) -> np.ndarray:
    """``(m, N, N)`` stack of ``B_l / 1^T B_l 1``."""
    _, _, totals = _marginals(prob, p.u, p.v)
    return np.stack([np.exp(log_plan(K, p.u[l], p.v[l]) - totals[l])
                     for l, K in enumerate(prob.kernels)])


def primal_value(prob: BarycenterProblem, plans) -> float:
    """``sum_l w_l (<C_l, pi_l> + gamma <pi_l, log pi_l - 1>)``."""
    plans = np.asarray(plans)
    total = 0.0
    for l, C in enumerate(prob.costs):
        X = plans[l]
        pos = X > 0
        ent = np.sum(X[pos] * (np.log(X[pos]) - 1.0))
        total += prob.weights[l] * (np.sum(C.entries * X) + prob.gamma * ent)
    return float(total)


def consistency_error(plans, w) -> float:
    """``sum_l w_l ||q_l - q_bar||_1`` over the column marginals ``q_l``."""
    q = np.asarray(plans).sum(axis=1)
    w = np.asarray(w)
    return float(w @ np.abs(q - w @ q).sum(axis=1))


def feasibility_l1(prob: BarycenterProblem, plans) -> float:
    """Column consistency plus row-marginal error, both w-weighted."""
    plans = np.asarray(plans)
    row_err = np.abs(plans.sum(axis=2) - prob.P).sum(axis=1)
    return consistency_error(plans, prob.weights) + float(prob.weights @ row_err)


class BarycenterDual(LinearlyConstrainedProblem):
    """The barycenter dual over ``lambda = [u_1..u_m, v_1..v_m]`` in two blocks."""

    def __init__(self, prob: BarycenterProblem):
        self.prob = prob
        m, n = prob.m, prob.n
        self.half = m * n
        self.dim = 2 * m * n
        self.blocks = [np.arange(self.half), np.arange(self.half, self.dim)]
        # with phi = ... - m gamma, f(x(lam*)) + phi(lam*) = -(m + 1) gamma
        self.duality_offset = (m + 1) * prob.gamma
        self._cache = {}

    def _split(self, lam):
        m = self.prob.m
        return lam[:self.half].reshape(m, -1), lam[self.half:].reshape(m, -1)

    def _marg(self, lam):
        key = lam.tobytes()
        hit = self._cache.get(key)
        if hit is None:
            u, v = self._split(lam)
            hit = _marginals(self.prob, u, v)
            if len(self._cache) >= 3:
                self._cache.pop(next(iter(self._cache)))
            self._cache[key] = hit
        return hit

    def value(self, lam):
        u, _ = self._split(lam)
        return _value(self.prob, u, self._marg(lam)[2])

    def gradient(self, lam):
        g_u, g_v = _gradient(self.prob, *self._marg(lam))
        return np.concatenate([g_u.ravel(), g_v.ravel()])

    def block_minimize(self, lam, i):
        u, v = self._split(lam)
        rows, cols, _ = self._marg(lam)
        if i == 0:
            return np.concatenate([_u_step(self.prob, u, rows).ravel(), lam[self.half:]])
        return np.concatenate([lam[:self.half], _v_step(self.prob, v, cols).ravel()])

    def project(self, lam):
        u, v = self._split(lam)
        return np.concatenate([u.ravel(), _project_v(v, self.prob.weights).ravel()])

    def primal_from_dual(self, lam):
        u, v = self._split(lam)
        totals = self._marg(lam)[2]
        return np.stack([np.exp(log_plan(K, u[l], v[l]) - totals[l])
                         for l, K in enumerate(self.prob.kernels)])

    def primal_value(self, x):
        return primal_value(self.prob, x)

    def constraint_residual(self, x):
        x = np.asarray(x)
        q = x.sum(axis=1)
        w = self.prob.weights
        return np.concatenate([(x.sum(axis=2) - self.prob.P).ravel(),
                               (q - w @ q).ravel()])

    def feasibility(self, x):
        return feasibility_l1(self.prob, x)


def _ibp_row(dual, lam, k, t0):
    X = dual.primal_from_dual(lam)
    g = dual.gradient(lam)
    val = dual.value(lam)
    return TraceRow(k, time.perf_counter() - t0, val,
                    feasibility=feasibility_l1(dual.prob, X),
                    gap=dual.primal_value(X) + val + dual.duality_offset,
                    grad_sqnorm=float(g @ g),
                    consistency=consistency_error(X, dual.prob.weights))


def run_ibp(prob: BarycenterProblem, stop: StoppingRule | None = None,
            p0: BarycenterDualPoint | None = None):
    """Alternate the u- and v-updates, one block per iteration.

    Returns ``(dual point, plans, trace)``. Trace rows carry the composite
    feasibility certificate and, separately, the column-consistency error
    ``sum_l w_l ||q_l - q_bar||_1`` of the current plans.
    """
    stop = stop or StoppingRule()
    dual = BarycenterDual(prob)
    lam = (p0 or BarycenterDualPoint.zeros(prob.m, prob.n)).flat()
    trace = ConvergenceTrace()
    t0 = time.perf_counter()
    trace.append(_ibp_row(dual, lam, 0, t0))
    k = 0
    while True:
        reason = stop.done(trace)
        if reason:
            trace.status = reason
            break
        lam = dual.block_minimize(lam, k % 2)
        k += 1
        row = _ibp_row(dual, lam, k, t0)
        trace.append(row)
        if row.grad_sqnorm < 1e-24:
            trace.status = "stationary"
            break
    plans = dual.primal_from_dual(lam)
    return (BarycenterDualPoint.from_flat(lam, prob.m),
            [TransportPlan(X) for X in plans], trace)


def accelerated_ibp_step(dual: BarycenterDual, state: PrimalDualState):
    """One adaptive primal-dual step with IBP updates as block minimization."""
    return pdaam_step(dual, state, "adaptive")


def run_accelerated_ibp(prob: BarycenterProblem, stop: StoppingRule | None = None,
                        L0: float = 1.0, method: str = "adaptive"):
    """Returns ``(eta, averaged plans, trace, final state)``.

    The trace carries the composite l1 feasibility and the gap
    ``f(x_hat) + phi(eta) + (m + 1) gamma``.
    """
    dual = BarycenterDual(prob)
    state, trace = run_pdaam(dual, np.zeros(dual.dim), method, stop, L0)
    return (BarycenterDualPoint.from_flat(state.eta, prob.m),
            [TransportPlan(X) for X in state.x_hat], trace, state)


def barycenter_estimate(plans, w) -> Histogram:
    """``sum_l w_l plan_l^T 1``, renormalized."""
    w = np.asarray(w, dtype=float)
    q = sum(wl * np.asarray(P).sum(axis=0) for wl, P in zip(w, plans))
    q = np.maximum(q, 0.0)
    return as_histogram(q / q.sum())
