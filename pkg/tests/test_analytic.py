"""Closed-form scalar case against recursion/series/FD oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gnmpc.analytic import (AnalyticCase, AnalyticEnv, AnalyticPolicy,
                            ITERATION_METHODS, method_error_table,
                            performance_grid, run_exact_iteration)
from gnmpc.errors import (DegenerateDiscount, DivergedIterate,
                          SingularHessian)
from gnmpc.estimators import EstimatorKind, estimate
from gnmpc.rl import rollout

CASE = AnalyticCase()          # gamma 0.9, sigma0^2 0.4, sigma_w^2 0.005
THETAS = [0.3, 0.5, 0.7670745394018469, 1.1, -0.6]


def bellman_p(case, theta, iters=4000):
    """Fixed point of the scalar value recursion, independent of closed form."""
    c = 1.0 - theta ** 2
    p = 0.0
    for _ in range(iters):
        p = -0.5 * (1.0 + theta ** 4) + case.gamma * c ** 2 * p
    return p


def bellman_q(case, theta, iters=4000):
    p = bellman_p(case, theta)
    q = 0.0
    for _ in range(iters):
        q = case.gamma * (p * case.sigma_w_sq + q)
    return q


def series_state_moment(case, theta):
    """sum_t gamma^t E[s_t^2] by direct forward recursion."""
    c2 = (1.0 - theta ** 2) ** 2
    Es, disc, total = case.sigma0_sq, 1.0, 0.0
    while disc > 1e-18:
        total += disc * Es
        Es = c2 * Es + case.sigma_w_sq
        disc *= case.gamma
    return total


class TestClosedFormsAgainstOracles:
    @pytest.mark.parametrize("theta", THETAS)
    def test_value_coeff_matches_bellman_recursion(self, theta):
        assert CASE.value_quadratic_coeff(theta) == pytest.approx(
            bellman_p(CASE, theta), rel=1e-12)

    @pytest.mark.parametrize("theta", THETAS)
    def test_value_offset_matches_recursion(self, theta):
        assert CASE.value_offset(theta) == pytest.approx(
            bellman_q(CASE, theta), rel=1e-12)

    @pytest.mark.parametrize("theta", THETAS)
    def test_state_moment_matches_series(self, theta):
        assert CASE.disc_state_moment(theta) == pytest.approx(
            series_state_moment(CASE, theta), rel=1e-12)

    @pytest.mark.parametrize("theta", THETAS)
    def test_performance_matches_reward_series(self, theta):
        # r_t = -(1 + theta^4)/2 * s_t^2 summed over the discounted moment
        J_series = -0.5 * (1.0 + theta ** 4) * series_state_moment(CASE, theta)
        assert CASE.performance(theta) == pytest.approx(J_series, rel=1e-12)

    @pytest.mark.parametrize("theta", THETAS)
    def test_grad_matches_fd(self, theta):
        h = 1e-6
        fd = (CASE.performance(theta + h) - CASE.performance(theta - h)) / (2 * h)
        assert CASE.grad(theta) == pytest.approx(fd, rel=1e-7, abs=1e-9)

    @pytest.mark.parametrize("theta", THETAS)
    def test_hess_matches_fd(self, theta):
        h = 1e-4
        fd = (CASE.performance(theta + h) - 2 * CASE.performance(theta)
              + CASE.performance(theta - h)) / h ** 2
        assert CASE.hess(theta) == pytest.approx(fd, rel=1e-5)

    def test_vectorized_matches_scalar(self):
        grid = np.array([0.3, 0.5, 0.9])
        assert np.allclose(CASE.performance(grid),
                           [CASE.performance(t) for t in grid])
        assert np.allclose(CASE.m2(grid), [CASE.m2(t) for t in grid])

    def test_degenerate_discount_raises(self):
        with pytest.raises(DegenerateDiscount):
            CASE.performance(1.5)


class TestOptimumAndCurvature:
    def test_theta_star_value(self):
        assert CASE.theta_star() == pytest.approx(0.7670745394018469, abs=1e-14)

    def test_theta_star_is_stationary_max(self):
        ts = CASE.theta_star()
        assert abs(CASE.grad(ts)) < 1e-10
        assert CASE.hess(ts) < 0
        grid = np.linspace(0.05, 1.3, 400)
        assert CASE.performance(ts) >= CASE.performance(grid).max() - 1e-9

    def test_m1_is_grad_over_theta(self):
        for theta in (0.3, 0.5, 1.1):
            assert CASE.m1(theta) == pytest.approx(CASE.grad(theta) / theta,
                                                   rel=1e-12)

    def test_m1_vanishes_at_optimum(self):
        assert abs(CASE.m1(CASE.theta_star())) < 1e-10

    def test_m2_equals_hess_at_optimum_only(self):
        ts = CASE.theta_star()
        assert CASE.m2(ts) == pytest.approx(CASE.hess(ts), rel=1e-9)
        # away from the optimum the decomposition misses the
        # state-distribution derivative
        gap = abs(CASE.m1(0.5) + CASE.m2(0.5) - CASE.hess(0.5))
        assert gap > 0.1

    def test_m2_negative_away_from_zero(self):
        grid = np.linspace(0.05, 1.3, 50)
        assert np.all(CASE.m2(grid) < 0)

    def test_frozen_curvature_at_optimum(self):
        assert CASE.hess(CASE.theta_star()) == pytest.approx(
            -3.002399956346704, rel=1e-10)


class TestQDerivatives:
    def q_explicit(self, theta, s, a):
        p = CASE.value_quadratic_coeff(theta)
        q = CASE.value_offset(theta)
        r = -0.5 * (s ** 2 + a ** 2)
        return r + CASE.gamma * (p * ((s + a) ** 2 + CASE.sigma_w_sq) + q)

    @pytest.mark.parametrize("theta,s,a", [(0.5, 1.2, -0.3), (0.9, -0.7, 0.4)])
    def test_matches_fd_of_explicit_q(self, theta, s, a):
        q_derivs = CASE.q_action_derivatives(theta)
        b, A = q_derivs(np.array([s]), np.array([a]), None)
        h = 1e-6
        fd1 = (self.q_explicit(theta, s, a + h)
               - self.q_explicit(theta, s, a - h)) / (2 * h)
        assert b[0] == pytest.approx(fd1, rel=1e-8)
        # Q is exactly quadratic in a: a wide second difference is exact
        h = 1e-2
        fd2 = (self.q_explicit(theta, s, a + h) - 2 * self.q_explicit(theta, s, a)
               + self.q_explicit(theta, s, a - h)) / h ** 2
        assert A[0, 0] == pytest.approx(fd2, rel=1e-9)

    def test_policy_derivatives(self):
        pol = AnalyticPolicy()
        s = np.array([1.7])
        assert pol.act(np.array([0.6]), s)[0] == pytest.approx(-0.36 * 1.7)
        assert pol.jacobian(np.array([0.6]), s)[0, 0] == pytest.approx(-1.2 * 1.7)
        assert pol.param_hessian(np.array([0.6]), s)[0, 0, 0] == pytest.approx(-2 * 1.7)


class TestSampledEstimatorConsistency:
    def test_exact_estimator_matches_realized_moment(self):
        # every sample term is proportional to s_t^2, so on a finite batch
        # the estimate equals the closed form rescaled by the realized
        # discounted state moment -- an exact identity, no MC tolerance
        theta = np.array([0.5])
        env = AnalyticEnv(CASE)
        rng = np.random.default_rng(12345)
        trajs = [rollout(env, AnalyticPolicy(), theta,
                         env.sample_scenario(rng), 80, rng)
                 for _ in range(150)]
        est = estimate(env, AnalyticPolicy(), theta, trajs,
                       EstimatorKind.EXACT, np.random.default_rng(0),
                       q_derivatives=CASE.q_action_derivatives(theta))
        disc = np.power(CASE.gamma, np.arange(80))
        realized = np.mean([(t.states[:-1, 0] ** 2) @ disc for t in trajs])
        scale = realized / CASE.disc_state_moment(0.5)
        assert est.grad[0] == pytest.approx(scale * CASE.grad(0.5), rel=1e-10)
        assert est.m2[0, 0] == pytest.approx(scale * CASE.m2(0.5), rel=1e-10)
        assert est.m1[0, 0] == pytest.approx(scale * CASE.m1(0.5), rel=1e-10)
        # and the realized moment itself concentrates at its expectation
        assert scale == pytest.approx(1.0, abs=0.35)


class TestIterations:
    def test_gradient_linear_rate(self):
        res = run_exact_iteration(CASE, "gradient", 0.7, n_iter=200, alpha=0.1)
        assert res.converged
        # asymptotic contraction |1 + alpha J''(theta*)|
        want = abs(1.0 + 0.1 * CASE.hess(CASE.theta_star()))
        tail = res.errors[40:50]
        ratios = tail[1:] / tail[:-1]
        assert np.allclose(ratios, want, atol=0.02)

    def test_newton_exact_quadratic_rate(self):
        res = run_exact_iteration(CASE, "newton_exact", 0.5, n_iter=12)
        assert res.errors[5] < 1e-12
        e = res.errors
        # quadratic: error roughly squares each step while above round-off
        assert e[2] < 5.0 * e[1] ** 2 / max(e[0], 1e-16)

    @pytest.mark.parametrize("method", ["newton_m1m2", "gauss_newton"])
    def test_surrogate_newton_converges_fast(self, method):
        res = run_exact_iteration(CASE, method, 0.7, n_iter=15)
        assert res.converged
        assert res.iterations <= 10
        assert res.errors[-1] < 1e-10

    def test_all_methods_reach_same_optimum(self):
        for method in ITERATION_METHODS:
            res = run_exact_iteration(CASE, method, 0.7, n_iter=150, alpha=0.1)
            # the parameterization is even: -theta* is the same policy
            assert abs(res.thetas[-1]) == pytest.approx(CASE.theta_star(),
                                                        abs=1e-6)

    def test_divergence_detected(self):
        with pytest.raises(DivergedIterate):
            run_exact_iteration(CASE, "gradient", 0.5, n_iter=100, alpha=5.0)

    def test_surrogate_curvature_is_local(self):
        # far from the optimum M1+M2 underestimates |J''| enough that the
        # surrogate Newton step leaves the stable region
        with pytest.raises(DivergedIterate):
            run_exact_iteration(CASE, "newton_m1m2", 0.5, n_iter=15)

    def test_zero_curvature_detected(self):
        with pytest.raises(SingularHessian):
            run_exact_iteration(CASE, "gauss_newton", 0.0, n_iter=3)

    def test_unknown_method_rejected(self):
        with pytest.raises(ValueError):
            run_exact_iteration(CASE, "sgd", 0.5)


class TestGridBuilders:
    def test_performance_grid_fields(self):
        grid = performance_grid(CASE, np.linspace(0.1, 1.2, 7))
        assert set(grid) == {"theta", "J", "dJ", "d2J", "m1", "m2"}
        assert all(v.shape == (7,) for v in grid.values())
        assert np.all(np.isfinite(grid["J"]))

    def test_error_table_aligned_columns(self):
        table = method_error_table(CASE, 0.7, n_iter=10)
        assert set(table) == set(ITERATION_METHODS)
        for err in table.values():
            assert err.shape == (11,)
        # second-order methods beat gradient ascent by iteration 6
        assert table["newton_exact"][6] < table["gradient"][6]
        assert table["gauss_newton"][6] < table["gradient"][6]


@settings(max_examples=60, deadline=None)
@given(st.floats(-1.3, 1.3).filter(lambda t: abs(t) > 0.05))
def test_grad_matches_fd_on_stable_region(theta):
    h = 1e-6
    fd = (CASE.performance(theta + h) - CASE.performance(theta - h)) / (2 * h)
    assert CASE.grad(theta) == pytest.approx(fd, rel=1e-5, abs=1e-8)
