"""Accelerated alternating minimization over block-structured objectives.

Two variants share the same skeleton (extrapolate, pick the block with the
largest gradient, minimize exactly over it, take a momentum step):

* ``line_search``: the extrapolation weight comes from a 1-D search on the
  segment between the iterate and the momentum point, and the step size
  solves a quadratic built from the achieved decrease.
* ``adaptive``: the extrapolation weight comes from a running Lipschitz
  estimate that is halved each iteration and doubled until a sufficient
  decrease test passes.
"""
from __future__ import annotations

import math
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .trace import ConvergenceTrace, TraceRow

STATIONARY_SQNORM = 1e-24
MAX_DOUBLINGS = 64
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class Stationary(Exception):
    """Raised when the gradient vanishes; ``point`` is then a solution."""

    def __init__(self, point=None, message="gradient vanished"):
        super().__init__(message)
        self.point = point


class LineSearchError(ArithmeticError):
    def __init__(self, beta):
        super().__init__(f"non-finite objective at beta={beta!r}")
        self.beta = beta


class BacktrackingError(RuntimeError):
    """Lipschitz estimate kept failing; objective not smooth or oracle broken."""


class BlockObjective(ABC):
    """Oracle for ``f`` split into coordinate blocks.

    Subclasses set ``blocks`` (a sequence of index arrays or slices) and
    implement ``value``, ``gradient`` and ``block_minimize``.
    """

    blocks: Sequence

    @property
    def n(self) -> int:
        return len(self.blocks)

    @abstractmethod
    def value(self, x) -> float: ...

    @abstractmethod
    def gradient(self, x) -> np.ndarray: ...

    @abstractmethod
    def block_minimize(self, x, i: int) -> np.ndarray:
        """Minimizer of ``f`` over points differing from ``x`` only on block ``i``."""

    def block_gradient_sqnorm(self, x, i: int, grad=None) -> float:
        g = self.gradient(x) if grad is None else grad
        gi = g[self.blocks[i]]
        return float(gi @ gi)

    def project(self, x) -> np.ndarray:
        """Map a point back onto the feasible subspace (identity by default)."""
        return x

    def line_minimize(self, x, d) -> Optional[float]:
        """Exact ``argmin_{beta in [0, 1]} f(x + beta d)`` if cheaply known, else None."""
        return None


@dataclass
class SolverState:
    x: np.ndarray
    v: np.ndarray
    A: float = 0.0
    a: float = 0.0
    L: float = 1.0
    k: int = 0

    @classmethod
    def start(cls, x0, L0: float = 1.0) -> "SolverState":
        x0 = np.array(x0, dtype=float)
        return cls(x=x0, v=x0.copy(), L=float(L0))


@dataclass
class StepInfo:
    """What happened inside one accepted step (needed by the primal-dual layer)."""

    y: np.ndarray
    grad: np.ndarray
    grad_sqnorm: float
    f_y: float
    f_next: float
    block: int
    weight: float  # beta (line search) or tau (adaptive)
    a: float
    doublings: int = 0


@dataclass
class StoppingRule:
    max_iters: int = 1000
    grad_sqnorm_tol: float = 0.0
    predicate: Optional[Callable[[ConvergenceTrace], bool]] = None

    def done(self, trace: ConvergenceTrace) -> Optional[str]:
        last = trace.last
        if last.iteration >= self.max_iters:
            return "max_iters"
        if self.grad_sqnorm_tol > 0 and last.grad_sqnorm <= self.grad_sqnorm_tol:
            return "converged"
        if self.predicate is not None and self.predicate(trace):
            return "predicate"
        return None


def _segment_value(obj, x, d, beta):
    val = obj.value(x + beta * d)
    if not np.isfinite(val):
        raise LineSearchError(beta)
    return val


def line_search_beta(obj: BlockObjective, x, v, tol: float = 1e-10):
    """Approximately minimize ``f(x + beta (v - x))`` over ``beta`` in [0, 1].

    Uses ``obj.line_minimize`` when available; otherwise golden-section
    search down to an interval of width ``tol``, then the endpoints are
    compared against the interior estimate.
    """
    d = v - x
    if not np.any(d):
        return 0.0, x.copy()
    exact = obj.line_minimize(x, d)
    if exact is not None:
        beta = min(max(float(exact), 0.0), 1.0)
        if beta == 1.0:
            return 1.0, np.array(v, dtype=float)
        return beta, x + beta * d
    lo, hi = 0.0, 1.0
    b1 = hi - GOLDEN * (hi - lo)
    b2 = lo + GOLDEN * (hi - lo)
    f1 = _segment_value(obj, x, d, b1)
    f2 = _segment_value(obj, x, d, b2)
    while hi - lo > tol:
        if f1 <= f2:
            hi, b2, f2 = b2, b1, f1
            b1 = hi - GOLDEN * (hi - lo)
            f1 = _segment_value(obj, x, d, b1)
        else:
            lo, b1, f1 = b1, b2, f2
            b2 = lo + GOLDEN * (hi - lo)
            f2 = _segment_value(obj, x, d, b2)
    beta, fb = (b1, f1) if f1 <= f2 else (b2, f2)
    f0 = _segment_value(obj, x, d, 0.0)
    fone = _segment_value(obj, x, d, 1.0)
    if fone <= fb and fone <= f0:
        beta = 1.0
    elif f0 <= fb:
        beta = 0.0
    if beta == 0.0:
        return 0.0, x.copy()
    if beta == 1.0:
        return 1.0, np.array(v, dtype=float)
    return beta, x + beta * d


def select_block(obj: BlockObjective, y, grad=None) -> int:
    """Gauss-Southwell rule: block with the largest gradient norm, lowest index on ties."""
    if grad is None:
        grad = obj.gradient(y)
    norms = [obj.block_gradient_sqnorm(y, i, grad) for i in range(obj.n)]
    return int(np.argmax(norms))


def solve_step_quadratic(A: float, f_y: float, f_next: float, grad_sqnorm: float) -> float:
    """Largest root ``a`` of ``f_y - a^2 g^2 / (2 (A + a)) = f_next``."""
    if grad_sqnorm < STATIONARY_SQNORM:
        raise Stationary(message="zero gradient in step-size equation")
    dec = f_y - f_next
    if not dec > 0:
        raise Stationary(message="no decrease from block minimization")
    # (g^2/2) a^2 - dec a - A dec = 0
    disc = dec * dec + 2.0 * grad_sqnorm * A * dec
    return (dec + math.sqrt(disc)) / grad_sqnorm


def aam_line_search_step(obj: BlockObjective, state: SolverState):
    """One iteration of the line-search variant. Returns ``(state', info)``."""
    beta, y = line_search_beta(obj, state.x, state.v)
    g = obj.gradient(y)
    gsq = float(g @ g)
    if gsq < STATIONARY_SQNORM:
        raise Stationary(y)
    i = select_block(obj, y, g)
    x_next = obj.block_minimize(y, i)
    f_y = obj.value(y)
    f_next = obj.value(x_next)
    try:
        a = solve_step_quadratic(state.A, f_y, f_next, gsq)
    except Stationary as exc:
        exc.point = y
        raise
    v_next = obj.project(state.v - a * g)
    new = replace(state, x=x_next, v=v_next, A=state.A + a, a=a, k=state.k + 1)
    return new, StepInfo(y, g, gsq, f_y, f_next, i, beta, a)


def aam_adaptive_step(obj: BlockObjective, state: SolverState, full_gradient: bool = False):
    """One iteration of the adaptive-Lipschitz variant. Returns ``(state', info)``.

    With ``full_gradient`` the block minimization is replaced by the step
    ``y - grad / L`` (plain adaptive accelerated gradient baseline).
    """
    if not state.L > 0:
        raise ValueError("Lipschitz estimate must be positive")
    L = state.L / 2.0
    for doublings in range(MAX_DOUBLINGS + 1):
        # a^2 L = A_k + a
        a = 1.0 / (2.0 * L) + math.sqrt(1.0 / (4.0 * L * L) + state.A / L)
        tau = min(1.0, 1.0 / (a * L))
        y = tau * state.v + (1.0 - tau) * state.x
        g = obj.gradient(y)
        gsq = float(g @ g)
        if gsq < STATIONARY_SQNORM:
            raise Stationary(y)
        if full_gradient:
            i = -1
            x_next = obj.project(y - g / L)
        else:
            i = select_block(obj, y, g)
            x_next = obj.block_minimize(y, i)
        f_y = obj.value(y)
        f_next = obj.value(x_next)
        # slack of a few ulps so rounding cannot make the test unsatisfiable
        slack = 4.0 * np.spacing(abs(f_y))
        if f_next <= f_y - gsq / (2.0 * L) + slack:
            v_next = obj.project(state.v - a * g)
            new = replace(state, x=x_next, v=v_next, A=state.A + a, a=a, L=L,
                          k=state.k + 1)
            return new, StepInfo(y, g, gsq, f_y, f_next, i, tau, a, doublings)
        L *= 2.0
    raise BacktrackingError(f"no acceptable step after {MAX_DOUBLINGS} doublings")


VARIANTS = ("line_search", "adaptive")


def step(obj, state, variant: str):
    if variant == "line_search":
        return aam_line_search_step(obj, state)
    if variant == "adaptive":
        return aam_adaptive_step(obj, state)
    if variant == "gradient":
        return aam_adaptive_step(obj, state, full_gradient=True)
    raise ValueError(f"unknown variant {variant!r}")


def run_aam(obj: BlockObjective, x0, variant: str = "line_search",
            stop: StoppingRule | None = None, L0: float = 1.0):
    """Iterate until ``stop``; returns ``(x, trace)``.

    Row ``k`` of the trace holds ``f(x^k)``, ``A_k``, ``L_k`` and the squared
    gradient norm at the extrapolated point used to produce ``x^k``.
    """
    stop = stop or StoppingRule()
    state = SolverState.start(x0, L0)
    trace = ConvergenceTrace()
    t0 = time.perf_counter()
    trace.append(TraceRow(0, 0.0, obj.value(state.x), L=state.L, A=0.0))
    trace.final_state = state
    while True:
        reason = stop.done(trace)
        if reason:
            trace.status = reason
            break
        try:
            state, info = step(obj, state, variant)
        except Stationary as exc:
            if exc.point is not None and obj.value(exc.point) <= obj.value(state.x):
                state = replace(state, x=np.asarray(exc.point, dtype=float))
            trace.status = "stationary"
            break
        trace.append(TraceRow(state.k, time.perf_counter() - t0, info.f_next,
                              L=state.L, A=state.A, grad_sqnorm=info.grad_sqnorm))
        trace.final_state = state
    trace.final_state = state
    return state.x, trace
