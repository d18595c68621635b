"""Log-domain primitives shared by the OT and barycenter solvers.

Everything kernel-related is kept as logarithms; plans are exponentiated only
when a caller asks for one.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

HIST_TOL = 1e-12


def log_sum_exp(values, axis=None):
    """Stable ``log(sum(exp(values)))``.

    Reduces over ``axis`` (all entries when ``None``). Slices made only of
    ``-inf`` give ``-inf``, the log of zero mass.
    """
    a = np.asarray(values, dtype=float)
    if a.size == 0:
        raise ValueError("log_sum_exp of an empty array")
    m = np.max(a, axis=axis, keepdims=True)
    # -inf rows would produce nan from (-inf) - (-inf)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        s = np.log(np.sum(np.exp(a - m_safe), axis=axis, keepdims=True)) + m_safe
    if axis is None:
        return float(s.reshape(()))
    return np.squeeze(s, axis=axis)


@dataclass(frozen=True)
class Histogram:
    """Probability vector. Build through :func:`as_histogram`."""

    weights: np.ndarray
    renormalized: bool = False

    def __post_init__(self):
        w = self.weights
        if w.ndim != 1:
            raise ValueError("histogram must be one-dimensional")
        if np.any(w < 0):
            raise ValueError("histogram has negative entries")
        if abs(w.sum() - 1.0) > HIST_TOL:
            raise ValueError(f"histogram sums to {w.sum()!r}, not 1")

    def __len__(self):
        return self.weights.size

    def __array__(self, dtype=None, copy=None):
        return self.weights if dtype is None else self.weights.astype(dtype)


def as_histogram(values) -> Histogram:
    """Validate and renormalize ``values`` into a :class:`Histogram`.

    Inputs whose mass is off by more than 1e-12 are divided by their sum and
    flagged ``renormalized`` (with a warning) instead of being rejected.
    """
    if isinstance(values, Histogram):
        return values
    w = np.array(values, dtype=float).ravel()
    if w.size == 0:
        raise ValueError("empty histogram")
    if not np.all(np.isfinite(w)):
        raise ValueError("histogram has non-finite entries")
    if np.any(w < 0):
        raise ValueError("histogram has negative entries")
    total = w.sum()
    if total <= 0:
        raise ValueError("histogram has zero total mass")
    renorm = abs(total - 1.0) > HIST_TOL
    if renorm:
        warnings.warn(f"histogram mass {total:.6g} renormalized to 1", stacklevel=2)
    w = w / total
    w.setflags(write=False)
    return Histogram(w, renormalized=renorm)


@dataclass(frozen=True)
class CostMatrix:
    entries: np.ndarray
    max_entry: float = field(init=False)

    def __post_init__(self):
        c = np.array(self.entries, dtype=float)
        if c.ndim != 2:
            raise ValueError("cost matrix must be two-dimensional")
        if np.any(c < 0) or not np.all(np.isfinite(c)):
            raise ValueError("cost entries must be finite and nonnegative")
        c.setflags(write=False)
        object.__setattr__(self, "entries", c)
        object.__setattr__(self, "max_entry", float(c.max()) if c.size else 0.0)

    @property
    def shape(self):
        return self.entries.shape


def as_cost(c) -> CostMatrix:
    return c if isinstance(c, CostMatrix) else CostMatrix(c)


@dataclass(frozen=True)
class LogKernel:
    """``log K = -C / gamma``."""

    log_entries: np.ndarray
    gamma: float

    @classmethod
    def from_cost(cls, cost, gamma: float) -> "LogKernel":
        if not gamma > 0:
            raise ValueError("gamma must be positive")
        c = as_cost(cost)
        lk = -c.entries / gamma
        lk.setflags(write=False)
        return cls(lk, float(gamma))

    @property
    def n(self) -> int:
        return self.log_entries.shape[0]


def log_plan(kernel: LogKernel, u, v) -> np.ndarray:
    """Entrywise ``log B(u, v) = u_i + v_j - C_ij / gamma``."""
    return np.asarray(u)[:, None] + np.asarray(v)[None, :] + kernel.log_entries


def log_marginals(kernel: LogKernel, u, v):
    """Log row sums, log column sums and log total mass of ``B(u, v)``."""
    lb = log_plan(kernel, u, v)
    if not np.all(np.isfinite(lb)):
        rows = log_sum_exp(lb, axis=1)
        cols = log_sum_exp(lb, axis=0)
        return rows, cols, log_sum_exp(rows)
    # finite fast path: per-row and per-column shifts keep every slice exact
    mr = lb.max(axis=1)
    rows = np.log(np.exp(lb - mr[:, None]).sum(axis=1)) + mr
    mc = lb.max(axis=0)
    cols = np.log(np.exp(lb - mc[None, :]).sum(axis=0)) + mc
    m = rows.max()
    total = float(np.log(np.exp(rows - m).sum()) + m)
    return rows, cols, total


def smooth_marginals(r, eps_prime: float, n: int | None = None) -> Histogram:
    """Mix ``r`` with the uniform vector so every entry is >= eps'/(8N).

    The result stays within eps'/4 of ``r`` in l1.
    """
    if not 0 < eps_prime < 8:
        raise ValueError("eps_prime must lie in (0, 8)")
    w = np.asarray(as_histogram(r).weights)
    n = w.size if n is None else n
    if n != w.size:
        raise ValueError("N does not match histogram length")
    out = (1 - eps_prime / 8) * (w + eps_prime / (n * (8 - eps_prime)))
    # the formula sums to 1 exactly in real arithmetic; remove rounding drift
    return as_histogram(out / out.sum())
