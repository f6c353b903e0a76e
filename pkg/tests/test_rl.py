"""Rollout and local-Q tests against hand-computable toy environments."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gnmpc.errors import RankDeficientFit
from gnmpc.rl import (LocalQModel, Trajectory, discounted_return,
                      estimate_state_value, fit_local_q, min_explore_samples,
                      rollout, sample_exploration)


class ConstRewardEnv:
    n_x, n_a, gamma = 1, 1, 0.5

    def sample_scenario(self, rng):
        return {"s0": np.array([0.0])}

    def reset(self, scenario):
        return scenario["s0"]

    def transition(self, s, a, scenario, rng):
        return s + a

    def reward(self, s, a, s_next):
        return 1.0


class ZeroPolicy:
    def __init__(self):
        self.resets = 0

    def reset(self):
        self.resets += 1

    def act(self, theta, s):
        return np.zeros(1)


class TestRollout:
    def test_constant_reward_discounted_return(self):
        # r = 1 every step, gamma = 0.5, T = 3: 1 + 0.5 + 0.25 = 1.75
        env = ConstRewardEnv()
        traj = rollout(env, ZeroPolicy(), np.zeros(1), {"s0": np.zeros(1)},
                       horizon=3, rng=np.random.default_rng(0))
        assert traj.discounted_return(0.5) == pytest.approx(1.75, abs=1e-15)
        assert discounted_return([1.0, 1.0, 1.0], 0.5) == 1.75

    def test_shapes_and_states(self):
        env = ConstRewardEnv()

        class Step:
            def act(self, theta, s):
                return np.array([0.25])

        traj = rollout(env, Step(), None, {"s0": np.array([1.0])},
                       horizon=4, rng=np.random.default_rng(0))
        assert traj.states.shape == (5, 1)
        assert traj.actions.shape == (4, 1)
        assert traj.rewards.shape == (4,)
        assert np.allclose(traj.states[:, 0], 1.0 + 0.25 * np.arange(5))

    def test_policy_reset_called_and_s0_override(self):
        env = ConstRewardEnv()
        pol = ZeroPolicy()
        traj = rollout(env, pol, np.zeros(1), {"s0": np.array([7.0])},
                       horizon=2, rng=np.random.default_rng(0),
                       s0=np.array([3.0]))
        assert pol.resets == 1
        assert traj.states[0, 0] == 3.0

    def test_len(self):
        t = Trajectory(states=np.zeros((4, 1)), actions=np.zeros((3, 1)),
                       rewards=np.zeros(3))
        assert len(t) == 3


class NoiseRewardEnv:
    """Reward each step is a unit normal draw (value of any state ~ N(0,1))."""

    n_x, n_a, gamma = 1, 1, 1.0

    def reset(self, scenario):
        return np.zeros(1)

    def transition(self, s, a, scenario, rng):
        return s + rng.standard_normal(1)

    def reward(self, s, a, s_next):
        return float(s_next[0] - s[0])


class TestValueEstimate:
    def test_deterministic_env_zero_se(self):
        env = ConstRewardEnv()
        mean, se = estimate_state_value(env, ZeroPolicy(), np.zeros(1),
                                        np.zeros(1), {"s0": np.zeros(1)},
                                        horizon=3, rng=np.random.default_rng(1),
                                        n_rollouts=1)
        assert mean == pytest.approx(1.75)
        assert se == 0.0

    def test_noise_env_mean_and_se_scale(self):
        env = NoiseRewardEnv()
        n = 64
        mean, se = estimate_state_value(env, ZeroPolicy(), np.zeros(1),
                                        np.zeros(1), None, horizon=1,
                                        rng=np.random.default_rng(7),
                                        n_rollouts=n)
        # single-step returns are iid N(0, 1)
        assert abs(mean) < 4.0 / np.sqrt(n)
        assert 0.6 / np.sqrt(n) < se < 1.5 / np.sqrt(n)


class TestLocalQModel:
    def test_predict_grad_hess(self):
        m = LocalQModel(c=2.0, b=np.array([1.0, -1.0]),
                        A=np.array([[2.0, 0.5], [0.5, -3.0]]))
        d = np.array([0.2, 0.4])
        # 2 + (0.2 - 0.4) + 0.5*(2*0.04 + 2*0.5*0.08 - 3*0.16)
        assert m.predict(d) == pytest.approx(2.0 - 0.2 + 0.5 * (0.08 + 0.08 - 0.48))
        assert np.allclose(m.grad(), [1.0, -1.0])
        assert np.allclose(m.grad(d), m.b + m.A @ d)
        assert np.allclose(m.hess(), m.A)

    def test_min_samples_formula(self):
        assert min_explore_samples(1) == 3
        assert min_explore_samples(2) == 6
        assert min_explore_samples(6) == 28


class QuadraticQEnv:
    """gamma = 0 so Q equals the (exactly quadratic) reward."""

    n_x, n_a, gamma = 1, 2, 0.0
    a0 = np.array([0.5, -1.0])
    b0 = np.array([2.0, -3.0])
    A0 = np.array([[-4.0, 1.0], [1.0, -2.0]])
    c0 = 1.5

    def transition(self, s, a, scenario, rng):
        return s

    def reward(self, s, a, s_next):
        d = a - self.a0
        return float(self.c0 + self.b0 @ d + 0.5 * d @ self.A0 @ d)


class TestFitLocalQ:
    def test_recovers_exact_quadratic(self):
        env = QuadraticQEnv()
        a_pi = np.array([0.8, -0.6])
        model = fit_local_q(env, np.zeros(1), a_pi, None, lambda s: 0.0,
                            sigma_explore=0.3, n_explore=20,
                            rng=np.random.default_rng(3))
        d0 = a_pi - env.a0
        assert model.c == pytest.approx(
            env.c0 + env.b0 @ d0 + 0.5 * d0 @ env.A0 @ d0, abs=1e-9)
        assert np.allclose(model.b, env.b0 + env.A0 @ d0, atol=1e-9)
        assert np.allclose(model.A, env.A0, atol=1e-8)

    def test_recovery_with_active_bounds(self):
        env = QuadraticQEnv()
        a_pi = np.array([0.8, -0.6])
        model = fit_local_q(env, np.zeros(1), a_pi, None, lambda s: 0.0,
                            sigma_explore=0.3, n_explore=40,
                            rng=np.random.default_rng(4),
                            a_lb=np.array([0.6, -0.9]),
                            a_ub=np.array([1.0, -0.3]))
        assert np.allclose(model.A, env.A0, atol=1e-7)

    def test_too_few_samples_raises(self):
        env = QuadraticQEnv()
        with pytest.raises(RankDeficientFit):
            fit_local_q(env, np.zeros(1), np.zeros(2), None, lambda s: 0.0,
                        sigma_explore=0.3, n_explore=3,
                        rng=np.random.default_rng(0))

    def test_degenerate_exploration_raises(self):
        env = QuadraticQEnv()
        with pytest.raises(RankDeficientFit):
            fit_local_q(env, np.zeros(1), np.zeros(2), None, lambda s: 0.0,
                        sigma_explore=0.0, n_explore=20,
                        rng=np.random.default_rng(0))

    def test_deterministic_in_seed(self):
        env = QuadraticQEnv()
        kw = dict(sigma_explore=0.3, n_explore=12)
        m1 = fit_local_q(env, np.zeros(1), np.zeros(2), None, lambda s: 0.0,
                         rng=np.random.default_rng(11), **kw)
        m2 = fit_local_q(env, np.zeros(1), np.zeros(2), None, lambda s: 0.0,
                         rng=np.random.default_rng(11), **kw)
        assert m1.c == m2.c
        assert np.array_equal(m1.b, m2.b)
        assert np.array_equal(m1.A, m2.A)

    def test_value_fn_enters_target(self):
        # V(s') = 10 adds gamma * 10 to every target: shifts c only
        env = QuadraticQEnv()

        class G(QuadraticQEnv):
            gamma = 0.5

        m0 = fit_local_q(QuadraticQEnv(), np.zeros(1), env.a0, None,
                         lambda s: 0.0, sigma_explore=0.3, n_explore=20,
                         rng=np.random.default_rng(5))
        m1 = fit_local_q(G(), np.zeros(1), env.a0, None, lambda s: 10.0,
                         sigma_explore=0.3, n_explore=20,
                         rng=np.random.default_rng(5))
        assert m1.c - m0.c == pytest.approx(5.0, abs=1e-9)
        assert np.allclose(m0.b, m1.b, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.05, 2.0))
def test_exploration_respects_bounds(seed, sigma):
    rng = np.random.default_rng(seed)
    lb = np.array([5.0, -8.5])
    ub = np.array([40.0, 0.0])
    center = lb + rng.random(2) * (ub - lb)
    acts = sample_exploration(center, sigma, lb, ub, 25, rng)
    assert acts.shape == (25, 2)
    assert np.all(acts >= lb) and np.all(acts <= ub)
