"""Smooth test objectives with analytically known constants.

Used by the test-suite and the experiment scripts to check the rate
envelopes, so every problem here exposes ``L`` (a valid Lipschitz constant of
the gradient), ``f_star`` and, when unique, ``x_star``.
"""
from __future__ import annotations

import numpy as np
from scipy.optimize import minimize

from .aam import BlockObjective


def split_blocks(dim: int, n: int, rng=None) -> list[np.ndarray]:
    """Partition ``range(dim)`` into ``n`` nonempty contiguous blocks."""
    if not 1 <= n <= dim:
        raise ValueError("need 1 <= n <= dim")
    if rng is None:
        cuts = np.linspace(0, dim, n + 1).astype(int)[1:-1]
    else:
        cuts = np.sort(rng.choice(np.arange(1, dim), size=n - 1, replace=False))
    edges = np.concatenate(([0], cuts, [dim]))
    return [np.arange(edges[k], edges[k + 1]) for k in range(n)]


class Quadratic(BlockObjective):
    """``f(z) = 1/2 (z - x*)^T Q (z - x*) + f*`` with exact block minimization."""

    def __init__(self, Q, x_star, blocks, f_star: float = 0.0):
        self.Q = np.asarray(Q, dtype=float)
        self.x_star = np.asarray(x_star, dtype=float)
        self.blocks = [np.asarray(b) for b in blocks]
        self.f_star = float(f_star)
        self.L = float(np.linalg.eigvalsh(self.Q)[-1])
        self._block_inv = [np.linalg.inv(self.Q[np.ix_(b, b)]) for b in self.blocks]

    @classmethod
    def random(cls, rng, dim: int, n_blocks: int, cond: float = 100.0):
        M = rng.standard_normal((dim, dim))
        U, _ = np.linalg.qr(M)
        eig = np.exp(rng.uniform(0.0, np.log(cond), size=dim))
        eig[0], eig[-1] = 1.0, cond
        Q = (U * eig) @ U.T
        Q = (Q + Q.T) / 2
        x_star = rng.standard_normal(dim)
        return cls(Q, x_star, split_blocks(dim, n_blocks, rng))

    def value(self, x):
        d = x - self.x_star
        return 0.5 * float(d @ self.Q @ d) + self.f_star

    def gradient(self, x):
        return self.Q @ (x - self.x_star)

    def line_minimize(self, x, d):
        curv = float(d @ self.Q @ d)
        if curv <= 0:
            return None
        return -float(self.gradient(x) @ d) / curv

    def block_minimize(self, x, i):
        b = self.blocks[i]
        g = self.gradient(x)
        out = np.array(x, dtype=float)
        out[b] = x[b] - self._block_inv[i] @ g[b]
        return out


class CosineValley(BlockObjective):
    """Nonconvex ``f(z) = 1/2 z_1^2 - cos(z_2)``; ``f* = -1``, ``L = 1``."""

    blocks = [np.array([0]), np.array([1])]
    L = 1.0
    f_star = -1.0

    def value(self, x):
        return 0.5 * x[0] ** 2 - np.cos(x[1])

    def gradient(self, x):
        return np.array([x[0], np.sin(x[1])])

    def block_minimize(self, x, i):
        out = np.array(x, dtype=float)
        if i == 0:
            out[0] = 0.0
        else:
            out[1] = 2 * np.pi * np.round(x[1] / (2 * np.pi))
        return out


class WavyQuadratic(BlockObjective):
    """``f(z) = 1/2 z^T Q z + sum_j alpha_j (1 - cos(w_j . z))``.

    Nonconvex once the cosine curvature beats the smallest eigenvalue of Q.
    ``f >= 0`` with equality only at 0, so ``f* = 0`` is known exactly.
    Block minimization is a local solve started from the block gradient
    step, which already secures the decrease the analysis relies on.
    """

    f_star = 0.0

    def __init__(self, Q, W, alpha, blocks):
        self.Q = np.asarray(Q, dtype=float)
        self.W = np.asarray(W, dtype=float)
        self.alpha = np.asarray(alpha, dtype=float)
        self.blocks = [np.asarray(b) for b in blocks]
        self.L = float(np.linalg.eigvalsh(self.Q)[-1]
                       + np.sum(self.alpha * np.sum(self.W ** 2, axis=1)))

    @classmethod
    def random(cls, rng, dim: int, n_blocks: int, n_waves: int = 3):
        M = rng.standard_normal((dim, dim))
        U, _ = np.linalg.qr(M)
        eig = rng.uniform(0.05, 2.0, size=dim)
        Q = (U * eig) @ U.T
        W = rng.standard_normal((n_waves, dim))
        alpha = rng.uniform(0.5, 2.0, size=n_waves)
        return cls((Q + Q.T) / 2, W, alpha, split_blocks(dim, n_blocks, rng))

    def value(self, x):
        return 0.5 * float(x @ self.Q @ x) + float(self.alpha @ (1 - np.cos(self.W @ x)))

    def gradient(self, x):
        return self.Q @ x + self.W.T @ (self.alpha * np.sin(self.W @ x))

    def block_minimize(self, x, i):
        b = self.blocks[i]
        base = np.array(x, dtype=float)
        start = base.copy()
        start[b] -= self.gradient(x)[b] / self.L

        def fb(zb):
            z = base.copy()
            z[b] = zb
            return self.value(z)

        def gb(zb):
            z = base.copy()
            z[b] = zb
            return self.gradient(z)[b]

        res = minimize(fb, start[b], jac=gb, method="BFGS", options={"gtol": 1e-12})
        out = base.copy()
        out[b] = res.x
        return out if self.value(out) <= self.value(start) else start
