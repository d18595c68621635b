"""Primal-dual accelerated alternating minimization.

Runs :mod:`otaccel.aam` on the dual objective of a linearly constrained
problem ``min f(x) s.t. A x = b, x in Q`` and keeps the step-weighted average
of the primal points recovered from the extrapolated dual points. The
average carries the feasibility and duality-gap certificates.
"""
from __future__ import annotations

import time
from abc import abstractmethod
from dataclasses import dataclass, replace

import numpy as np

from .aam import (BlockObjective, SolverState, Stationary, StoppingRule,
                  aam_adaptive_step, aam_line_search_step)
from .trace import ConvergenceTrace, TraceRow


class LinearlyConstrainedProblem(BlockObjective):
    """Dual objective ``phi`` plus the primal oracles behind it.

    ``value``/``gradient`` are the dual ``phi`` and its gradient; the
    block structure is the dual's. ``duality_offset`` is added to
    ``f(x) + phi(lambda)`` so the pair vanishes at a saddle point.
    """

    duality_offset = 0.0

    @abstractmethod
    def primal_from_dual(self, lam) -> np.ndarray: ...

    @abstractmethod
    def primal_value(self, x) -> float: ...

    @abstractmethod
    def constraint_residual(self, x) -> np.ndarray:
        """``A x - b``."""

    def feasibility(self, x) -> float:
        return float(np.linalg.norm(self.constraint_residual(x)))


@dataclass
class PrimalDualState:
    inner: SolverState  # x = eta, v = zeta
    x_hat: np.ndarray | None = None

    @classmethod
    def start(cls, lam0, L0: float = 1.0):
        return cls(SolverState.start(lam0, L0))

    @property
    def eta(self):
        return self.inner.x

    @property
    def zeta(self):
        return self.inner.v

    @property
    def k(self):
        return self.inner.k


def _average(prob, state: PrimalDualState, new_inner: SolverState, info):
    x_lam = prob.primal_from_dual(info.y)
    A_old = state.inner.A
    if state.x_hat is None or A_old == 0.0:
        return x_lam
    # A_k = L_k a_k^2 in the adaptive variant, so one formula serves both
    return (info.a * x_lam + A_old * state.x_hat) / new_inner.A


def pdaam_step(prob: LinearlyConstrainedProblem, state: PrimalDualState,
               variant: str = "adaptive"):
    """One dual step plus the primal-average update. Returns ``(state', info)``."""
    if variant == "adaptive":
        inner, info = aam_adaptive_step(prob, state.inner)
    elif variant == "line_search":
        inner, info = aam_line_search_step(prob, state.inner)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return PrimalDualState(inner, _average(prob, state, inner, info)), info


def apdagd_baseline_step(prob: LinearlyConstrainedProblem, state: PrimalDualState):
    """Adaptive accelerated gradient step on the dual, same averaging and test."""
    inner, info = aam_adaptive_step(prob, state.inner, full_gradient=True)
    return PrimalDualState(inner, _average(prob, state, inner, info)), info


def certificates(prob: LinearlyConstrainedProblem, state: PrimalDualState):
    """``(||A x_hat - b||_2, f(x_hat) + phi(eta))``; the gap is signed."""
    if state.x_hat is None:
        raise ValueError("no primal average before the first step")
    feas = prob.feasibility(state.x_hat)
    gap = prob.primal_value(state.x_hat) + prob.value(state.eta) + prob.duality_offset
    return feas, float(gap)


METHODS = {
    "adaptive": lambda p, s: pdaam_step(p, s, "adaptive"),
    "line_search": lambda p, s: pdaam_step(p, s, "line_search"),
    "gradient": apdagd_baseline_step,
}


def run_pdaam(prob: LinearlyConstrainedProblem, lam0=None, method: str = "adaptive",
              stop: StoppingRule | None = None, L0: float = 1.0, on_step=None):
    """Iterate a primal-dual method; returns ``(state, trace)``.

    ``on_step(state, info)`` is called after each accepted step and may
    return extra keyword fields for the trace row (e.g. ``feasibility``).
    By default the trace carries the certificates from :func:`certificates`.
    """
    stop = stop or StoppingRule()
    step_fn = METHODS[method]
    if lam0 is None:
        lam0 = np.zeros(prob.dim)
    state = PrimalDualState.start(lam0, L0)
    trace = ConvergenceTrace()
    t0 = time.perf_counter()
    trace.append(TraceRow(0, 0.0, prob.value(state.eta), L=state.inner.L, A=0.0))
    while True:
        reason = stop.done(trace)
        if reason:
            trace.status = reason
            break
        try:
            state, info = step_fn(prob, state)
        except Stationary as exc:
            state = _finish_stationary(prob, state, exc)
            trace.status = "stationary"
            trace.append(_row(prob, state, trace.last.iteration + 1, t0, 0.0, on_step, None))
            break
        trace.append(_row(prob, state, state.k, t0, info.grad_sqnorm, on_step, info))
    trace.final_state = state
    return state, trace


def _finish_stationary(prob, state, exc):
    """A vanishing dual gradient means ``x(point)`` is primal optimal."""
    lam = np.asarray(exc.point if exc.point is not None else state.eta, dtype=float)
    inner = replace(state.inner, x=lam, k=state.k + 1)
    return PrimalDualState(inner, prob.primal_from_dual(lam))


def _row(prob, state, k, t0, gsq, on_step, info):
    feas, gap = certificates(prob, state)
    fields = dict(feasibility=feas, gap=gap)
    if on_step is not None:
        fields.update(on_step(state, info) or {})
    return TraceRow(k, time.perf_counter() - t0, prob.value(state.eta),
                    L=state.inner.L, A=state.inner.A, grad_sqnorm=gsq, **fields)
