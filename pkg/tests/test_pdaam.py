import numpy as np
import pytest

from otaccel.aam import Stationary, StoppingRule
from otaccel.ot import EntropicOTProblem, OTDual, dual_radius_bound, envelope_accumulator
from otaccel.pdaam import (LinearlyConstrainedProblem, PrimalDualState, apdagd_baseline_step,
                           certificates, pdaam_step, run_pdaam)


class MinNorm(LinearlyConstrainedProblem):
    """``min 1/2 ||x||^2 s.t. M x = b``; dual ``<lam, b> + 1/2 ||M^T lam||^2``."""

    def __init__(self, M, b, n_blocks=2):
        self.M = np.asarray(M, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.dim = self.M.shape[0]
        self.blocks = np.array_split(np.arange(self.dim), n_blocks)
        self.H = self.M @ self.M.T

    def value(self, lam):
        return float(lam @ self.b + 0.5 * lam @ self.H @ lam)

    def gradient(self, lam):
        return self.b + self.H @ lam

    def block_minimize(self, lam, i):
        idx = self.blocks[i]
        g = self.gradient(lam)
        out = np.array(lam, dtype=float)
        out[idx] -= np.linalg.solve(self.H[np.ix_(idx, idx)], g[idx])
        return out

    def primal_from_dual(self, lam):
        return -self.M.T @ lam

    def primal_value(self, x):
        return 0.5 * float(x @ x)

    def constraint_residual(self, x):
        return self.M @ x - self.b

    def optimum(self):
        x = np.linalg.lstsq(self.M, self.b, rcond=None)[0]
        return 0.5 * float(x @ x)


@pytest.fixture
def min_norm(rng):
    return MinNorm(rng.normal(size=(4, 7)), rng.normal(size=4))


def test_gradient_is_residual(min_norm, rng):
    for _ in range(5):
        lam = rng.normal(size=4)
        x = min_norm.primal_from_dual(lam)
        np.testing.assert_allclose(min_norm.gradient(lam), -min_norm.constraint_residual(x),
                                   rtol=1e-10)


def test_first_average_is_x_of_lambda0(min_norm):
    for variant in ("adaptive", "line_search"):
        state = PrimalDualState.start(np.zeros(4))
        new, info = pdaam_step(min_norm, state, variant)
        np.testing.assert_allclose(new.x_hat, min_norm.primal_from_dual(info.y))


def test_average_weights_telescope(min_norm):
    # with a constant x(lambda) = 1 the average stays 1 iff the weights sum to 1
    class Constant(MinNorm):
        def primal_from_dual(self, lam):
            return np.ones(7)

    prob = Constant(min_norm.M, min_norm.b)
    for variant in ("adaptive", "line_search"):
        state = PrimalDualState.start(np.zeros(4))
        for _ in range(25):
            try:
                state, _ = pdaam_step(prob, state, variant)
            except Stationary:
                break
            np.testing.assert_allclose(state.x_hat, 1.0, rtol=1e-12)


def test_certificates_need_a_step(min_norm):
    with pytest.raises(ValueError):
        certificates(min_norm, PrimalDualState.start(np.zeros(4)))


def test_baseline_first_step(min_norm):
    L = float(np.linalg.eigvalsh(min_norm.H)[-1])
    state = PrimalDualState.start(np.zeros(4), L0=2 * L)
    new, info = apdagd_baseline_step(min_norm, state)
    if info.doublings == 0:
        lam0 = np.zeros(4)
        np.testing.assert_allclose(new.eta, lam0 - min_norm.gradient(lam0) / new.inner.L)


def test_solvers_agree_on_optimum(min_norm):
    target = -min_norm.optimum()
    for method in ("adaptive", "line_search", "gradient"):
        state, trace = run_pdaam(min_norm, method=method,
                                 stop=StoppingRule(max_iters=3000, grad_sqnorm_tol=1e-26))
        assert min_norm.value(state.eta) == pytest.approx(target, abs=1e-8)
        feas, gap = certificates(min_norm, state)
        assert feas < 1e-3 and abs(gap) < 1e-3


def test_gap_lower_bound_and_zero_at_optimum(rng):
    prob = EntropicOTProblem(rng.uniform(0, 1, (5, 5)), 0.2,
                             rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(5)))
    dual = OTDual(prob)
    R = dual_radius_bound(prob)
    state, trace = run_pdaam(dual, stop=StoppingRule(max_iters=400))
    for row in trace.rows[1:]:
        assert row.gap >= -R * row.feasibility - 1e-12


def test_uniform_zero_cost_is_feasible_at_start():
    prob = EntropicOTProblem(np.zeros((4, 4)), 1.0, np.full(4, 0.25), np.full(4, 0.25))
    dual = OTDual(prob)
    x = dual.primal_from_dual(np.zeros(8))
    assert dual.feasibility(x) == 0.0


def test_ot_two_point_certificates():
    prob = EntropicOTProblem([[0, 1], [1, 0]], 0.1, [0.7, 0.3], [0.3, 0.7])
    dual = OTDual(prob)
    done = lambda tr: tr.last.iteration > 0 and max(tr.last.feasibility, abs(tr.last.gap)) < 1e-6
    for method, budget in (("line_search", 200), ("adaptive", 5000)):
        state, trace = run_pdaam(dual, method=method,
                                 stop=StoppingRule(max_iters=budget, predicate=done))
        feas, gap = certificates(dual, state)
        assert max(feas, abs(gap)) < 1e-6, method


def test_certificate_envelope_and_slope(rng):
    prob = EntropicOTProblem(rng.uniform(0, 1, (6, 6)), 0.1,
                             rng.dirichlet(np.ones(6)), rng.dirichlet(np.ones(6)))
    dual = OTDual(prob)
    R = dual_radius_bound(prob)
    _, trace = run_pdaam(dual, method="gradient", stop=StoppingRule(max_iters=500))
    rows = trace.rows[1:]
    for row in rows:
        A = envelope_accumulator(prob, row.A)
        assert A * row.feasibility <= 2 * R
        assert A * abs(row.gap) <= 2 * R * R
    # O(1/k^2) decay of the envelope quantity feas <= 2R/A_k
    ks = np.array([r.iteration for r in rows if r.iteration >= 10])
    env = np.array([2 * R / envelope_accumulator(prob, r.A) for r in rows if r.iteration >= 10])
    slope = np.polyfit(np.log(ks), np.log(env), 1)[0]
    assert slope <= -1.5
