"""Independent reference solutions used by the tests and benchmarks."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import as_cost, as_histogram
from .ot import EntropicOTProblem, OTDual, OTDualPoint

MAX_BRUTEFORCE_N = 5


@dataclass(frozen=True)
class ExactOTResult:
    optimal_cost: float
    optimal_plan: np.ndarray


def exact_ot_bruteforce(C, r, c) -> ExactOTResult:
    """Exact unregularized OT by enumerating the vertices of ``U(r, c)``.

    Every vertex has a spanning-forest support, and a forest always has a
    leaf cell whose value is the smaller of the two residual margins it
    touches. Saturating one cell at a time and dropping the exhausted
    row/column therefore reaches every vertex; the search is memoized on
    the active rows, columns and residual masses.
    """
    C = as_cost(C).entries
    r = np.asarray(as_histogram(r).weights)
    c = np.asarray(as_histogram(c).weights)
    n_rows, n_cols = C.shape
    if n_rows != r.size or n_cols != c.size:
        raise ValueError("shape mismatch between C, r and c")
    if max(n_rows, n_cols) > MAX_BRUTEFORCE_N:
        raise ValueError(f"exact_ot_bruteforce supports N <= {MAX_BRUTEFORCE_N}")
    scale = 1 << 52
    # exact integer masses make residuals independent of elimination order
    ri = _to_units(r, scale)
    ci = _to_units(c, scale)
    Cl = C.tolist()

    @lru_cache(maxsize=None)
    def best(rres: tuple, cres: tuple):
        rows = [i for i, x in enumerate(rres) if x]
        cols = [j for j, x in enumerate(cres) if x]
        if not rows or not cols:
            return 0.0, ()
        out = (math.inf, ())
        for i in rows:
            ri_ = rres[i]
            Ci = Cl[i]
            for j in cols:
                cj = cres[j]
                t = ri_ if ri_ < cj else cj
                nr = rres[:i] + (ri_ - t,) + rres[i + 1:]
                nc = cres[:j] + (cj - t,) + cres[j + 1:]
                sub_cost, sub_cells = best(nr, nc)
                total = Ci[j] * t + sub_cost
                if total < out[0]:
                    out = (total, ((i, j, t),) + sub_cells)
        return out

    _, cells = best(ri, ci)
    plan = np.zeros_like(C)
    for i, j, t in cells:
        plan[i, j] += t / scale
    return ExactOTResult(float(np.sum(C * plan)), plan)


def _to_units(x, scale):
    """Integer masses summing to exactly ``scale``."""
    units = [int(round(v * scale)) for v in x]
    k = int(np.argmax(x))
    units[k] += scale - sum(units)
    return tuple(units)


class OracleError(RuntimeError):
    pass


def entropic_reference(prob: EntropicOTProblem, max_iters: int = 1_000_000,
                       value_tol: float = 1e-14, marginal_tol: float = 1e-12) -> OTDualPoint:
    """Run plain Sinkhorn to numerical convergence.

    Stops once successive dual values differ by less than ``value_tol`` and
    the plan's l1 marginal error is below ``marginal_tol``.
    """
    dual = OTDual(prob)
    lam = np.zeros(dual.dim)
    prev = dual.value(lam)
    for k in range(max_iters):
        lam = dual.block_minimize(lam, k % 2)
        val = dual.value(lam)
        if abs(prev - val) < value_tol:
            X = dual.primal_from_dual(lam)
            if dual.feasibility_l1(X) < marginal_tol:
                return OTDualPoint.from_flat(lam)
        prev = val
    raise OracleError(f"Sinkhorn did not converge in {max_iters} iterations")


def finite_difference_gradient(f, x, h: float = 1e-6) -> np.ndarray:
    """Central differences ``(f(x + h e_i) - f(x - h e_i)) / 2h``."""
    if not h > 0:
        raise ValueError("h must be positive")
    x = np.array(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def directional_derivative(f, x, d, h: float = 1e-6) -> float:
    """Central difference of ``f`` along ``d``."""
    x = np.asarray(x, dtype=float)
    d = np.asarray(d, dtype=float)
    return (f(x + h * d) - f(x - h * d)) / (2 * h)
