"""Rollout machinery and local action-value models.

Environments are stateless: scenarios (sampled exogenous randomness such as
plant parameters and initial conditions) are explicit values threaded through
``reset``/``transition``, which keeps every rollout reproducible from its
scenario and generator alone.  Policies expose ``act`` plus first and second
parameter derivatives; the quadratic Q-model fitted around the policy action
supplies the action derivatives that the gradient and curvature estimators
consume.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol, runtime_checkable

import numpy as np

from gnmpc.errors import RankDeficientFit


@runtime_checkable
class Environment(Protocol):
    n_x: int
    n_a: int
    gamma: float

    def sample_scenario(self, rng): ...
    def reset(self, scenario) -> np.ndarray: ...
    def transition(self, s, a, scenario, rng) -> np.ndarray: ...
    def reward(self, s, a, s_next) -> float: ...


@runtime_checkable
class Policy(Protocol):
    def act(self, theta, s) -> np.ndarray: ...
    def jacobian(self, theta, s) -> np.ndarray: ...
    def param_hessian(self, theta, s) -> np.ndarray: ...


@dataclass
class Trajectory:
    states: np.ndarray    # (T+1, n_x)
    actions: np.ndarray   # (T, n_a)
    rewards: np.ndarray   # (T,)
    scenario: object = None

    def __len__(self):
        return self.rewards.shape[0]

    def discounted_return(self, gamma):
        return discounted_return(self.rewards, gamma)


def discounted_return(rewards, gamma):
    rewards = np.asarray(rewards, dtype=float)
    return float(rewards @ np.power(gamma, np.arange(rewards.size)))


def rollout(env, policy, theta, scenario, horizon, rng, s0=None):
    """Run ``horizon`` closed-loop steps of ``policy`` in ``env``.

    ``s0`` overrides the scenario's initial state (used for value estimates
    from interior states).  The policy's warm-start cache, when present, is
    cleared first so trajectories do not depend on call order.
    """
    if hasattr(policy, "reset"):
        policy.reset()
    s = np.asarray(env.reset(scenario) if s0 is None else s0, dtype=float).copy()
    n_x = s.shape[0]
    states = np.empty((horizon + 1, n_x))
    rewards = np.empty(horizon)
    states[0] = s
    actions = None
    for t in range(horizon):
        a = np.atleast_1d(np.asarray(policy.act(theta, s), dtype=float))
        if actions is None:
            actions = np.empty((horizon, a.shape[0]))
        actions[t] = a
        s_next = np.asarray(env.transition(s, a, scenario, rng), dtype=float)
        rewards[t] = env.reward(s, a, s_next)
        states[t + 1] = s_next
        s = s_next
    if actions is None:
        actions = np.empty((0, env.n_a))
    return Trajectory(states=states, actions=actions, rewards=rewards,
                      scenario=scenario)


def estimate_state_value(env, policy, theta, s, scenario, horizon, rng,
                         n_rollouts=1):
    """Monte-Carlo value of ``s`` under the policy: (mean, standard error)."""
    returns = np.empty(n_rollouts)
    for i in range(n_rollouts):
        traj = rollout(env, policy, theta, scenario, horizon, rng, s0=s)
        returns[i] = traj.discounted_return(env.gamma)
    mean = float(returns.mean())
    se = float(returns.std(ddof=1) / np.sqrt(n_rollouts)) if n_rollouts > 1 else 0.0
    return mean, se


@dataclass
class LocalQModel:
    """Quadratic model of Q(s, a) in the action deviation d = a - a_pi.

    Q(a_pi + d) ~ c + b.d + d.A.d/2;  grad at a_pi is ``b``, Hessian ``A``.
    """

    c: float
    b: np.ndarray       # (n_a,)
    A: np.ndarray       # (n_a, n_a), symmetric

    def predict(self, delta):
        delta = np.asarray(delta, dtype=float)
        return float(self.c + self.b @ delta + 0.5 * delta @ self.A @ delta)

    def grad(self, delta=None):
        if delta is None:
            return self.b.copy()
        return self.b + self.A @ np.asarray(delta, dtype=float)

    def hess(self):
        return self.A.copy()


def min_explore_samples(n_a):
    """Quadratic in n_a actions has (n_a+1)(n_a+2)/2 coefficients."""
    return (n_a + 1) * (n_a + 2) // 2


def sample_exploration(a_center, sigma, a_lb, a_ub, n, rng, max_resample=50):
    """Draw n actions ~ N(a_center, diag(sigma^2)) truncated to the box.

    Out-of-bound components are redrawn; after ``max_resample`` passes any
    stragglers are clipped.  Returns an (n, n_a) array.
    """
    a_center = np.asarray(a_center, dtype=float)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), a_center.shape)
    a = a_center + sigma * rng.standard_normal((n, a_center.size))
    if a_lb is None:
        return a
    for _ in range(max_resample):
        bad = (a < a_lb) | (a > a_ub)
        if not bad.any():
            return a
        redraw = a_center + sigma * rng.standard_normal((n, a_center.size))
        a = np.where(bad, redraw, a)
    return np.clip(a, a_lb, a_ub)


def _quad_features(deltas):
    n, n_a = deltas.shape
    cols = [np.ones((n, 1)), deltas]
    for i in range(n_a):
        cols.append(0.5 * deltas[:, i:i + 1] ** 2)
    for i in range(n_a):
        for j in range(i + 1, n_a):
            cols.append((deltas[:, i] * deltas[:, j])[:, None])
    return np.concatenate(cols, axis=1)


def fit_local_q(env, s, a_pi, scenario, value_fn, sigma_explore, n_explore,
                rng, a_lb=None, a_ub=None, ridge=0.0):
    """Fit a quadratic Q-model around the policy action at one state.

    Each exploratory action a is scored with the one-step target
    r(s, a, s') + gamma * value_fn(s').  The policy action itself is always
    included so the fit is anchored at d = 0.  Raises
    :class:`RankDeficientFit` when the design cannot identify a quadratic.
    """
    a_pi = np.asarray(a_pi, dtype=float)
    n_a = a_pi.size
    n_feat = min_explore_samples(n_a)
    if n_explore + 1 < n_feat:
        raise RankDeficientFit(
            f"need at least {n_feat} action samples for a quadratic in "
            f"{n_a} actions, got {n_explore + 1}")
    actions = sample_exploration(a_pi, sigma_explore, a_lb, a_ub, n_explore, rng)
    actions = np.concatenate([a_pi[None, :], actions], axis=0)
    targets = np.empty(actions.shape[0])
    for k, a in enumerate(actions):
        s_next = np.asarray(env.transition(s, a, scenario, rng), dtype=float)
        targets[k] = env.reward(s, a, s_next) + env.gamma * value_fn(s_next)
    deltas = actions - a_pi
    X = _quad_features(deltas)
    if ridge > 0.0:
        XtX = X.T @ X + ridge * np.eye(X.shape[1])
        coef = np.linalg.solve(XtX, X.T @ targets)
        rank = X.shape[1]
    else:
        coef, _, rank, _ = np.linalg.lstsq(X, targets, rcond=None)
    if rank < X.shape[1]:
        raise RankDeficientFit(
            f"exploration design has rank {rank} < {X.shape[1]}; widen "
            "sigma_explore or add samples")
    c = float(coef[0])
    b = coef[1:1 + n_a].copy()
    A = np.zeros((n_a, n_a))
    A[np.arange(n_a), np.arange(n_a)] = coef[1 + n_a:1 + 2 * n_a]
    k = 1 + 2 * n_a
    for i in range(n_a):
        for j in range(i + 1, n_a):
            A[i, j] = A[j, i] = coef[k]
            k += 1
    return LocalQModel(c=c, b=b, A=A)
