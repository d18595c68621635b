"""Entropy-regularized optimal transport through its softmax dual.

The dual is

    phi(u, v) = gamma * (log 1^T B(u, v) 1 - <u, r> - <v, c>),
    B(u, v)_ij = exp(u_i + v_j - C_ij / gamma),

minimized over ``(u, v)``. Exact minimization in ``u`` or ``v`` is one half
of a Sinkhorn sweep; accelerating those block steps gives the accelerated
Sinkhorn method. All kernel arithmetic is in the log domain.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .aam import Stationary, StoppingRule
from .core import (CostMatrix, Histogram, LogKernel, as_cost, as_histogram,
                   log_marginals, log_plan, log_sum_exp, smooth_marginals)
from .pdaam import (LinearlyConstrainedProblem, PrimalDualState,
                    apdagd_baseline_step, pdaam_step)
from .trace import ConvergenceTrace, TraceRow


@dataclass(frozen=True)
class EntropicOTProblem:
    cost: CostMatrix
    gamma: float
    r: Histogram
    c: Histogram
    kernel: LogKernel = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "cost", as_cost(self.cost))
        object.__setattr__(self, "r", as_histogram(self.r))
        object.__setattr__(self, "c", as_histogram(self.c))
        n = len(self.r)
        if len(self.c) != n or self.cost.shape != (n, n):
            raise ValueError("cost must be N x N with marginals of length N")
        object.__setattr__(self, "kernel", LogKernel.from_cost(self.cost, self.gamma))

    @property
    def n(self) -> int:
        return len(self.r)

    @property
    def C(self) -> np.ndarray:
        return self.cost.entries


@dataclass
class OTDualPoint:
    u: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "OTDualPoint":
        return cls(np.zeros(n), np.zeros(n))

    @classmethod
    def from_flat(cls, lam) -> "OTDualPoint":
        lam = np.asarray(lam, dtype=float)
        n = lam.size // 2
        return cls(lam[:n].copy(), lam[n:].copy())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.u, self.v])


@dataclass
class TransportPlan:
    plan: np.ndarray
    in_polytope: bool = False

    def __array__(self, dtype=None, copy=None):
        return self.plan if dtype is None else self.plan.astype(dtype)

    @property
    def row_marginal(self):
        return self.plan.sum(axis=1)

    @property
    def col_marginal(self):
        return self.plan.sum(axis=0)


def _log_pos(h, what):
    w = np.asarray(h)
    if np.any(w <= 0):
        raise ValueError(f"{what} has zero entries; smooth it first (smooth_marginals)")
    return np.log(w)


def ot_dual_value(prob: EntropicOTProblem, p: OTDualPoint) -> float:
    _, _, total = log_marginals(prob.kernel, p.u, p.v)
    r, c = prob.r.weights, prob.c.weights
    return prob.gamma * (total - p.u @ r - p.v @ c)


def ot_dual_gradient(prob: EntropicOTProblem, p: OTDualPoint):
    """``(gamma (B1/S - r), gamma (B^T 1/S - c))`` with ``S = 1^T B 1``."""
    rows, cols, total = log_marginals(prob.kernel, p.u, p.v)
    g_u = prob.gamma * (np.exp(rows - total) - prob.r.weights)
    g_v = prob.gamma * (np.exp(cols - total) - prob.c.weights)
    return g_u, g_v


def sinkhorn_u_update(prob: EntropicOTProblem, p: OTDualPoint) -> OTDualPoint:
    rows, _, _ = log_marginals(prob.kernel, p.u, p.v)
    return OTDualPoint(p.u + _log_pos(prob.r, "r") - rows, p.v.copy())


def sinkhorn_v_update(prob: EntropicOTProblem, p: OTDualPoint) -> OTDualPoint:
    _, cols, _ = log_marginals(prob.kernel, p.u, p.v)
    return OTDualPoint(p.u.copy(), p.v + _log_pos(prob.c, "c") - cols)


def primal_from_dual(prob: EntropicOTProblem, p: OTDualPoint) -> TransportPlan:
    lb = log_plan(prob.kernel, p.u, p.v)
    return TransportPlan(np.exp(lb - log_sum_exp(lb)))


def primal_value(prob: EntropicOTProblem, X) -> float:
    """``<C, X> + gamma <X, log X>`` with ``0 log 0 = 0``."""
    X = np.asarray(X)
    pos = X > 0
    return float(np.sum(prob.C * X) + prob.gamma * np.sum(X[pos] * np.log(X[pos])))


def marginal_error(X, r, c) -> float:
    """``||X 1 - r||_1 + ||X^T 1 - c||_1``."""
    X = np.asarray(X)
    return float(np.abs(X.sum(axis=1) - np.asarray(r)).sum()
                 + np.abs(X.sum(axis=0) - np.asarray(c)).sum())


def envelope_accumulator(prob: EntropicOTProblem, A: float) -> float:
    """Rescale a solver accumulator to the constraint-multiplier coordinates.

    The solvers run in ``(u, v) = -(y, z)/gamma - 1/2``, where the dual
    gradient is ``gamma (A x - b)``. Step weights measured in ``(y, z)``,
    where the gradient is ``b - A x``, are ``gamma**2`` times larger; the
    feasibility and gap envelopes are stated there.
    """
    return prob.gamma ** 2 * A


class OTDual(LinearlyConstrainedProblem):
    """The OT dual as a two-block objective over ``lambda = [u; v]``."""

    def __init__(self, prob: EntropicOTProblem):
        self.prob = prob
        n = prob.n
        self.dim = 2 * n
        self.blocks = [np.arange(n), np.arange(n, 2 * n)]
        self._log_r = _log_pos(prob.r, "r")
        self._log_c = _log_pos(prob.c, "c")
        self._cache = {}

    def _marg(self, lam):
        # the adaptive step touches y, x_next and y again; three slots suffice
        key = lam.tobytes()
        hit = self._cache.get(key)
        if hit is None:
            n = self.prob.n
            hit = log_marginals(self.prob.kernel, lam[:n], lam[n:])
            if len(self._cache) >= 3:
                self._cache.pop(next(iter(self._cache)))
            self._cache[key] = hit
        return hit

    def value(self, lam):
        n = self.prob.n
        _, _, total = self._marg(lam)
        return self.prob.gamma * (total - lam[:n] @ self.prob.r.weights
                                  - lam[n:] @ self.prob.c.weights)

    def gradient(self, lam):
        rows, cols, total = self._marg(lam)
        g = np.concatenate([np.exp(rows - total) - self.prob.r.weights,
                            np.exp(cols - total) - self.prob.c.weights])
        return self.prob.gamma * g

    def block_minimize(self, lam, i):
        n = self.prob.n
        rows, cols, _ = self._marg(lam)
        out = np.array(lam, dtype=float)
        if i == 0:
            out[:n] += self._log_r - rows
        else:
            out[n:] += self._log_c - cols
        return out

    def primal_from_dual(self, lam):
        n = self.prob.n
        _, _, total = self._marg(lam)
        return np.exp(log_plan(self.prob.kernel, lam[:n], lam[n:]) - total)

    def primal_value(self, x):
        return primal_value(self.prob, x)

    def constraint_residual(self, x):
        return np.concatenate([x.sum(axis=1) - self.prob.r.weights,
                               x.sum(axis=0) - self.prob.c.weights])

    def feasibility_l1(self, x):
        return float(np.abs(self.constraint_residual(x)).sum())


def _sinkhorn_row(prob, dual, lam, k, t0, gsq=None):
    X = dual.primal_from_dual(lam)
    g = dual.gradient(lam) if gsq is None else None
    return TraceRow(k, time.perf_counter() - t0, dual.value(lam),
                    feasibility=dual.feasibility_l1(X),
                    gap=dual.primal_value(X) + dual.value(lam),
                    grad_sqnorm=float(g @ g) if g is not None else gsq)


def run_sinkhorn(prob: EntropicOTProblem, stop: StoppingRule | None = None,
                 p0: OTDualPoint | None = None, on_iter=None):
    """Alternate exact u- and v-minimization (one block per iteration).

    Returns ``(dual point, plan, trace)``. The trace records the dual value,
    the l1 marginal error of the current plan and its gap ``f(x) + phi``.
    """
    stop = stop or StoppingRule()
    dual = OTDual(prob)
    lam = (p0 or OTDualPoint.zeros(prob.n)).flat()
    trace = ConvergenceTrace()
    t0 = time.perf_counter()
    trace.append(_sinkhorn_row(prob, dual, lam, 0, t0))
    k = 0
    while True:
        reason = stop.done(trace)
        if reason:
            trace.status = reason
            break
        lam = dual.block_minimize(lam, k % 2)
        k += 1
        row = _sinkhorn_row(prob, dual, lam, k, t0)
        if on_iter is not None:
            on_iter(row, lam)
        trace.append(row)
        if row.grad_sqnorm < 1e-24:
            trace.status = "stationary"
            break
    p = OTDualPoint.from_flat(lam)
    return p, primal_from_dual(prob, p), trace


def accelerated_sinkhorn_step(dual: OTDual, state: PrimalDualState):
    """One adaptive primal-dual step with Sinkhorn half-steps as block minimization."""
    return pdaam_step(dual, state, "adaptive")


def run_accelerated_sinkhorn(prob: EntropicOTProblem, stop: StoppingRule | None = None,
                             L0: float = 1.0, method: str = "adaptive", on_step=None):
    """Accelerated Sinkhorn (``method='adaptive'``), its line-search twin, or
    the full-gradient baseline (``method='gradient'``).

    Returns ``(eta as OTDualPoint, primal average plan, trace, final state)``.
    """
    from .pdaam import run_pdaam

    dual = OTDual(prob)

    def extra(state, info):
        out = {"feasibility": dual.feasibility_l1(state.x_hat)}
        if on_step is not None:
            out.update(on_step(state, info) or {})
        return out

    state, trace = run_pdaam(dual, np.zeros(dual.dim), method, stop, L0, on_step=extra)
    return OTDualPoint.from_flat(state.eta), TransportPlan(state.x_hat), trace, state


def round_to_polytope(X, r, c) -> TransportPlan:
    """Move a mass-1 plan onto ``U(r, c)``.

    Scale rows down to ``r``, columns down to ``c``, then add the rank-one
    correction ``err_r err_c^T / ||err_r||_1``.
    """
    X = np.array(X, dtype=float)
    r = np.asarray(r, dtype=float)
    c = np.asarray(c, dtype=float)
    rs = X.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        fr = np.where(rs > 0, np.minimum(r / rs, 1.0), 1.0)
    X = fr[:, None] * X
    cs = X.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        fc = np.where(cs > 0, np.minimum(c / cs, 1.0), 1.0)
    X = X * fc[None, :]
    err_r = np.maximum(r - X.sum(axis=1), 0.0)
    err_c = np.maximum(c - X.sum(axis=0), 0.0)
    mass = err_r.sum()
    if mass > 0:
        X = X + np.outer(err_r, err_c) / mass
    return TransportPlan(X, in_polytope=True)


def dual_radius_bound(prob: EntropicOTProblem) -> float:
    """Upper bound on the distance from the start point to a dual solution,
    measured in the constraint-multiplier coordinates."""
    m = min(prob.r.weights.min(), prob.c.weights.min())
    if m <= 0:
        raise ValueError("marginals must be strictly positive")
    return math.sqrt(prob.n / 2) * (prob.cost.max_entry - prob.gamma / 2 * math.log(m))


class ApproximationError(RuntimeError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass
class ApproximateOTResult:
    plan: TransportPlan
    cost: float
    trace: ConvergenceTrace
    gamma: float
    eps_prime: float
    iterations: int


def approximate_parameters(C, eps: float):
    """``(gamma, eps')`` for a target accuracy ``eps`` on unregularized OT."""
    n = np.asarray(C).shape[0]
    if not eps > 0:
        raise ValueError("eps must be positive")
    if n < 2:
        raise ValueError("need N >= 2")
    cmax = float(np.max(C))
    gamma = eps / (4 * math.log(n))
    # C = 0 makes every plan optimal; any admissible smoothing will do
    eps_prime = eps / (8 * cmax) if cmax > 0 else 1.0
    return gamma, min(eps_prime, 4.0)


def approximate_ot(C, r, c, eps: float, max_iters: int = 100_000, L0: float = 1.0,
                   method: str = "aam-sinkhorn", check_interval: int = 1):
    """Plan in ``U(r, c)`` with ``<C, X> <= OT(r, c) + eps``.

    Solves the entropic problem with ``gamma = eps / (4 ln N)`` on marginals
    smoothed by ``eps' = eps / (8 ||C||_inf)``, rounds the current primal
    estimate onto ``U(r, c)`` and stops once both the rounding shift and the
    duality gap are below ``eps / 6``. ``method`` is ``aam-sinkhorn``,
    ``sinkhorn`` or ``apdagd-baseline``.
    """
    cost = as_cost(C)
    r = as_histogram(r)
    c = as_histogram(c)
    n = len(r)
    gamma, eps_prime = approximate_parameters(cost.entries, eps)
    prob = EntropicOTProblem(cost, gamma, smooth_marginals(r, eps_prime, n),
                             smooth_marginals(c, eps_prime, n))
    dual = OTDual(prob)
    Cm = cost.entries
    target = eps / 6
    trace = ConvergenceTrace()
    t0 = time.perf_counter()
    best = {"round_shift": math.inf, "gap": math.inf}
    last_feas = math.inf

    def check(X_k, dual_val, k):
        nonlocal last_feas
        feas = dual.feasibility_l1(X_k)
        gap = dual.primal_value(X_k) + dual_val
        row = TraceRow(k, time.perf_counter() - t0, dual_val, feasibility=feas, gap=gap)
        done = None
        rounding_due = k % check_interval == 0 and feas <= 10 * last_feas
        if rounding_due:
            last_feas = feas
            if gap <= target:
                X_hat = round_to_polytope(X_k, r.weights, c.weights)
                shift = float(np.sum(Cm * (X_hat.plan - X_k)))
                if gap < best["gap"] or shift < best["round_shift"]:
                    best.update(round_shift=shift, gap=gap, iteration=k)
                if shift <= target:
                    done = X_hat
            elif gap < best["gap"]:
                best.update(gap=gap, iteration=k)
        return row, done

    if method == "sinkhorn":
        lam = np.zeros(dual.dim)
        X = dual.primal_from_dual(lam)
        row, done = check(X, dual.value(lam), 0)
        trace.append(row)
        k = 0
        while done is None and k < max_iters:
            lam = dual.block_minimize(lam, k % 2)
            k += 1
            row, done = check(dual.primal_from_dual(lam), dual.value(lam), k)
            trace.append(row)
    elif method in ("aam-sinkhorn", "apdagd-baseline"):
        stepper = (apdagd_baseline_step if method == "apdagd-baseline"
                   else lambda d, s: pdaam_step(d, s, "adaptive"))
        state = PrimalDualState.start(np.zeros(dual.dim), L0)
        trace.append(TraceRow(0, 0.0, dual.value(state.eta), L=L0))
        done = None
        k = 0
        while done is None and k < max_iters:
            try:
                state, _ = stepper(dual, state)
                X_k = state.x_hat
            except Stationary as exc:
                lam = exc.point if exc.point is not None else state.eta
                X_k = dual.primal_from_dual(lam)
                state = PrimalDualState(state.inner, X_k)
                state.inner.x = np.asarray(lam, dtype=float)
            k += 1
            row, done = check(X_k, dual.value(state.eta), k)
            row.L, row.A = state.inner.L, state.inner.A
            trace.append(row)
    else:
        raise ValueError(f"unknown method {method!r}")

    if done is None:
        trace.status = "max_iters"
        raise ApproximationError(
            f"no eps-certificate after {max_iters} iterations", best)
    trace.status = "certified"
    return ApproximateOTResult(done, float(np.sum(Cm * done.plan)), trace,
                               gamma, eps_prime, k)
