import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otaccel.aam import StoppingRule
from otaccel.pdaam import run_pdaam
from otaccel.oracle import entropic_reference, exact_ot_bruteforce, finite_difference_gradient
from otaccel.ot import (ApproximationError, EntropicOTProblem, OTDual, OTDualPoint, approximate_ot,
                        approximate_parameters, dual_radius_bound, marginal_error,
                        ot_dual_gradient, ot_dual_value, primal_from_dual,
                        round_to_polytope, run_accelerated_sinkhorn, run_sinkhorn,
                        sinkhorn_u_update, sinkhorn_v_update)

from conftest import random_ot

TWO = dict(C=[[0, 1], [1, 0]], r=[0.7, 0.3], c=[0.3, 0.7])


def two_point(gamma):
    return EntropicOTProblem(TWO["C"], gamma, TWO["r"], TWO["c"])


def test_problem_validation():
    with pytest.raises(ValueError):
        EntropicOTProblem(np.zeros((2, 3)), 1.0, [0.5, 0.5], [0.5, 0.5])
    with pytest.raises(ValueError):
        EntropicOTProblem(np.zeros((2, 2)), 0.0, [0.5, 0.5], [0.5, 0.5])


def test_dual_value_examples():
    prob = EntropicOTProblem(np.zeros((2, 2)), 1.0, [0.2, 0.8], [0.5, 0.5])
    assert ot_dual_value(prob, OTDualPoint.zeros(2)) == pytest.approx(math.log(4))
    prob = EntropicOTProblem(np.zeros((2, 2)), 1.0, [0.5, 0.5], [0.5, 0.5])
    h = np.full(2, math.log(0.5))
    assert ot_dual_value(prob, OTDualPoint(h, h.copy())) == pytest.approx(2 * math.log(2))


def test_dual_shift_invariance(rng):
    prob = random_ot(rng, 5, 0.3)
    p = OTDualPoint(rng.normal(size=5), rng.normal(size=5))
    base = ot_dual_value(prob, p)
    q = OTDualPoint(p.u + 3.7, p.v - 1.2)
    assert ot_dual_value(prob, q) == pytest.approx(base, abs=1e-12)


def test_gradient_zero_at_uniform_zero_cost():
    prob = EntropicOTProblem(np.zeros((3, 3)), 1.0, np.full(3, 1 / 3), np.full(3, 1 / 3))
    g_u, g_v = ot_dual_gradient(prob, OTDualPoint.zeros(3))
    assert np.abs(g_u).max() < 1e-16 and np.abs(g_v).max() < 1e-16


def test_gradient_finite_differences(rng):
    for _ in range(10):
        prob = random_ot(rng, 4, rng.uniform(0.05, 1.0))
        lam = rng.normal(size=8)
        f = lambda x: ot_dual_value(prob, OTDualPoint.from_flat(x))
        g = np.concatenate(ot_dual_gradient(prob, OTDualPoint.from_flat(lam)))
        fd = finite_difference_gradient(f, lam, 1e-6)
        assert np.linalg.norm(fd - g) <= 1e-5 * max(np.linalg.norm(g), 1e-8)


def test_gradient_mass_balance(rng):
    prob = random_ot(rng, 7, 0.1)
    for _ in range(20):
        g_u, g_v = ot_dual_gradient(prob, OTDualPoint(rng.normal(size=7) * 5, rng.normal(size=7) * 5))
        assert abs(g_u.sum()) < 1e-10 and abs(g_v.sum()) < 1e-10


def test_sinkhorn_updates_examples():
    prob = EntropicOTProblem(np.zeros((2, 2)), 1.0, [0.5, 0.5], [0.5, 0.5])
    p = sinkhorn_u_update(prob, OTDualPoint.zeros(2))
    np.testing.assert_allclose(p.u, -math.log(4))
    np.testing.assert_allclose(sinkhorn_u_update(prob, p).u, p.u, atol=1e-15)
    prob = EntropicOTProblem(np.zeros((3, 3)), 1.0, [0.2, 0.3, 0.5], [0.6, 0.1, 0.3])
    p = sinkhorn_v_update(prob, sinkhorn_u_update(prob, OTDualPoint.zeros(3)))
    X = primal_from_dual(prob, p).plan
    np.testing.assert_allclose(X, np.outer(prob.r.weights, prob.c.weights), atol=1e-15)


def test_sinkhorn_update_needs_positive_marginals():
    prob = EntropicOTProblem(np.zeros((2, 2)), 1.0, [1.0, 0.0], [0.5, 0.5])
    with pytest.raises(ValueError):
        sinkhorn_u_update(prob, OTDualPoint.zeros(2))


def test_block_optimality_after_updates(rng):
    prob = random_ot(rng, 6, 0.05)
    p = OTDualPoint(rng.normal(size=6), rng.normal(size=6))
    p = sinkhorn_u_update(prob, p)
    g_u, _ = ot_dual_gradient(prob, p)
    assert np.abs(g_u).max() < 1e-12
    X = primal_from_dual(prob, p).plan
    np.testing.assert_allclose(X.sum(1), prob.r.weights, atol=1e-12)
    p = sinkhorn_v_update(prob, p)
    _, g_v = ot_dual_gradient(prob, p)
    assert np.abs(g_v).max() < 1e-12


def test_primal_from_dual_examples(rng):
    prob = EntropicOTProblem(np.zeros((3, 3)), 1.0, np.full(3, 1 / 3), np.full(3, 1 / 3))
    np.testing.assert_allclose(primal_from_dual(prob, OTDualPoint.zeros(3)).plan, 1 / 9)
    prob = random_ot(rng, 5, 0.2)
    u, v = rng.normal(size=5), rng.normal(size=5)
    X1 = primal_from_dual(prob, OTDualPoint(u, v)).plan
    X2 = primal_from_dual(prob, OTDualPoint(u + 2.5, v - 2.5)).plan
    np.testing.assert_allclose(X1, X2, rtol=1e-12)
    assert X1.sum() == pytest.approx(1.0, abs=1e-12)


def test_run_sinkhorn_zero_cost_one_sweep():
    prob = EntropicOTProblem(np.zeros((3, 3)), 1.0, [0.2, 0.3, 0.5], [0.6, 0.1, 0.3])
    _, plan, trace = run_sinkhorn(prob, StoppingRule(max_iters=10))
    assert trace.status == "stationary" and trace.last.iteration == 2
    np.testing.assert_allclose(plan.plan, np.outer(prob.r.weights, prob.c.weights), atol=1e-15)


def test_run_sinkhorn_two_point_matches_reference():
    prob = two_point(0.5)
    ref = primal_from_dual(prob, entropic_reference(prob)).plan
    _, plan, trace = run_sinkhorn(prob, StoppingRule(max_iters=1000))
    np.testing.assert_allclose(plan.plan, ref, atol=1e-12)
    vals = trace.column("value")
    assert all(b <= a + 1e-15 for a, b in zip(vals, vals[1:]))


def test_sinkhorn_sweep_marginal_error_monotone(rng):
    prob = random_ot(rng, 8, 0.05)
    _, _, trace = run_sinkhorn(prob, StoppingRule(max_iters=200))
    sweeps = trace.column("feasibility")[2::2]
    assert all(b <= a + 1e-15 for a, b in zip(sweeps, sweeps[1:]))


def test_accelerated_sinkhorn_two_point():
    prob = two_point(0.5)
    _, ref_plan, _ = run_sinkhorn(prob, StoppingRule(max_iters=1000))
    # run_pdaam's trace carries the l2 feasibility certificate
    done = lambda tr: tr.last.iteration > 0 and tr.last.feasibility < 1e-8 and abs(tr.last.gap) < 1e-8
    state, trace = run_pdaam(OTDual(prob), stop=StoppingRule(max_iters=40_000, predicate=done))
    assert trace.status == "predicate"
    np.testing.assert_allclose(state.x_hat, ref_plan.plan, atol=1e-6)


def test_accelerated_sinkhorn_zero_gradient_start():
    prob = EntropicOTProblem(np.zeros((3, 3)), 1.0, np.full(3, 1 / 3), np.full(3, 1 / 3))
    _, plan, trace, _ = run_accelerated_sinkhorn(prob, StoppingRule(max_iters=10))
    assert trace.status == "stationary" and trace.last.iteration == 1
    np.testing.assert_allclose(plan.plan, 1 / 9)


def test_accelerated_L_estimate_bounded(rng):
    # in (u, v) coordinates the dual is 2*gamma smooth; L_k <= 2 n L once L_0 <= 2 n L
    for gamma in (0.5, 0.1, 0.02):
        prob = random_ot(rng, 6, gamma)
        bound = 2 * 2 * (2 * gamma)
        _, _, trace, _ = run_accelerated_sinkhorn(prob, StoppingRule(max_iters=300), L0=bound)
        assert max(trace.column("L")[1:]) <= bound


def test_dual_range_at_convergence(rng):
    for _ in range(5):
        prob = random_ot(rng, 6, rng.uniform(0.05, 0.5))
        p = entropic_reference(prob)
        cmax = prob.cost.max_entry
        assert np.ptp(p.u) <= cmax / prob.gamma - math.log(prob.r.weights.min()) + 1e-9
        assert np.ptp(p.v) <= cmax / prob.gamma - math.log(prob.c.weights.min()) + 1e-9


def test_round_to_polytope_examples():
    r = c = np.array([0.5, 0.5])
    out = round_to_polytope([[1.0, 0.0], [0.0, 0.0]], r, c)
    np.testing.assert_allclose(out.plan, [[0.5, 0.0], [0.0, 0.5]])
    assert out.in_polytope
    X = np.array([[0.1, 0.4], [0.2, 0.3]])
    np.testing.assert_array_equal(round_to_polytope(X, X.sum(1), X.sum(0)).plan, X)


@given(st.integers(2, 8), st.integers(0, 2 ** 32 - 1))
@settings(max_examples=200)
def test_round_to_polytope_moves_little(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.dirichlet(np.ones(n * n)).reshape(n, n)
    r, c = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
    out = round_to_polytope(X, r, c).plan
    assert out.min() >= 0
    np.testing.assert_allclose(out.sum(1), r, atol=1e-12)
    np.testing.assert_allclose(out.sum(0), c, atol=1e-12)
    assert np.abs(out - X).sum() <= 2 * marginal_error(X, r, c) + 1e-12


def test_dual_radius_bound_examples():
    prob = EntropicOTProblem([[0, 1], [1, 0]], 1.0, [0.5, 0.5], [0.5, 0.5])
    assert dual_radius_bound(prob) == pytest.approx(1 + 0.5 * math.log(2))
    prob = EntropicOTProblem(np.full((4, 4), 2.0), 0.3, np.full(4, 0.25), np.full(4, 0.25))
    assert dual_radius_bound(prob) == pytest.approx(math.sqrt(2) * (2 + 0.15 * math.log(4)))
    prob = EntropicOTProblem(np.eye(2), 1e-9, [0.5, 0.5], [0.5, 0.5])
    assert dual_radius_bound(prob) == pytest.approx(1.0, abs=1e-8)
    with pytest.raises(ValueError):
        dual_radius_bound(EntropicOTProblem(np.eye(2), 1.0, [1.0, 0.0], [0.5, 0.5]))


def test_approximate_parameters():
    C = np.random.default_rng(0).uniform(0, 3, (10, 10))
    gamma, eps_prime = approximate_parameters(C, 0.1)
    assert gamma == pytest.approx(0.1 / (4 * math.log(10)))
    assert gamma == pytest.approx(0.0108574, abs=1e-7)
    assert eps_prime == pytest.approx(0.1 / (8 * C.max()))
    with pytest.raises(ValueError):
        approximate_parameters(np.zeros((1, 1)), 0.1)
    with pytest.raises(ValueError):
        approximate_parameters(C, 0.0)


def test_approximate_ot_integer_costs(rng):
    for method in ("aam-sinkhorn", "sinkhorn", "apdagd-baseline"):
        C = rng.integers(0, 6, (3, 3)).astype(float)
        r, c = rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(3))
        res = approximate_ot(C, r, c, 0.05, method=method)
        np.testing.assert_allclose(res.plan.plan.sum(1), r, atol=1e-12)
        np.testing.assert_allclose(res.plan.plan.sum(0), c, atol=1e-12)
        assert res.cost <= exact_ot_bruteforce(C, r, c).optimal_cost + 0.05


def test_approximate_ot_zero_cost():
    res = approximate_ot(np.zeros((3, 3)), [0.2, 0.3, 0.5], [0.5, 0.5, 0.0], 0.1)
    assert res.cost == 0.0 and res.iterations == 1


def test_approximate_ot_exhaustion():
    C = np.random.default_rng(1).uniform(0, 1, (6, 6))
    with pytest.raises(ApproximationError) as info:
        approximate_ot(C, np.full(6, 1 / 6), np.full(6, 1 / 6), 1e-4, max_iters=3)
    assert "gap" in info.value.best


def test_approximate_ot_unknown_method():
    with pytest.raises(ValueError):
        approximate_ot(np.eye(2), [0.5, 0.5], [0.5, 0.5], 0.1, method="greenkhorn")
