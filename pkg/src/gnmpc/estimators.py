"""Sampled estimators of the policy gradient and two curvature surrogates.

For a deterministic policy pi_theta the performance gradient is estimated
from visited states by

    g ~ (1/N) sum_k  Jpi(s_k)^T  grad_a Q(s_k, a_k),

and the Hessian of J decomposes into two sample averages:

    M1 = (1/N) sum_k  sum_a  d2pi/dtheta2[a] * grad_a Q[a]      (policy curvature)
    M2 = (1/N) sum_k  Jpi^T  hess_a Q  Jpi                      (Gauss-Newton term)

M1 vanishes at stationary points (grad_a Q is orthogonal to the policy
curvature there), so M2 alone is an asymptotically exact, cheaper-to-sample
Hessian surrogate; away from the optimum M1 + M2 is the full estimate.
Action derivatives of Q come either from a fitted local quadratic model or
from caller-supplied exact derivatives.
"""

from __future__ import annotations

import enum
import inspect
from dataclasses import dataclass
from functools import partial

import numpy as np

from gnmpc.errors import (EmptySampleSet, EstimatorSampleLoss,
                          PolicyEvaluationFailed, RankDeficientFit,
                          SingularKKT, WeakComplementarity)
from gnmpc.rl import fit_local_q


class EstimatorKind(enum.Enum):
    GRAD_ONLY = "grad_only"
    GAUSS_NEWTON = "gauss_newton"       # B = M2
    APPROX_NEWTON = "approx_newton"     # B = M1 + M2
    EXACT = "exact"                     # M1 + M2 from exact Q derivatives

    @property
    def needs_m2(self):
        return self is not EstimatorKind.GRAD_ONLY

    @property
    def needs_m1(self):
        return self in (EstimatorKind.APPROX_NEWTON, EstimatorKind.EXACT)


def tensor_vec_product(tensors, vec):
    """sum_a vec[a] * tensors[a] for one sample: (n_a,p,p),(n_a,) -> (p,p)."""
    return np.einsum("aij,a->ij", tensors, vec)


def _weights(n, weights):
    if weights is None:
        return np.full(n, 1.0 / n)
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (n,):
        raise ValueError(f"weights must have shape ({n},)")
    return weights


def policy_gradient(jacobians, q_grads, weights=None):
    """(1/N) sum_k J_k^T b_k (or a weighted sum when weights are given)."""
    jacobians = np.asarray(jacobians, dtype=float)
    q_grads = np.asarray(q_grads, dtype=float)
    w = _weights(jacobians.shape[0], weights)
    return np.einsum("k,kap,ka->p", w, jacobians, q_grads)


def hessian_m1(policy_hessians, q_grads, weights=None):
    """(1/N) sum_k sum_a b_k[a] * d2pi[a]/dtheta2."""
    policy_hessians = np.asarray(policy_hessians, dtype=float)
    q_grads = np.asarray(q_grads, dtype=float)
    w = _weights(policy_hessians.shape[0], weights)
    return np.einsum("k,kaij,ka->ij", w, policy_hessians, q_grads)


def hessian_m2(jacobians, q_hessians, weights=None):
    """(1/N) sum_k J_k^T A_k J_k."""
    jacobians = np.asarray(jacobians, dtype=float)
    q_hessians = np.asarray(q_hessians, dtype=float)
    w = _weights(jacobians.shape[0], weights)
    return np.einsum("k,kap,kab,kbq->pq", w, jacobians, q_hessians, jacobians)


@dataclass
class GradHessEstimate:
    grad: np.ndarray
    m1: np.ndarray | None
    m2: np.ndarray | None
    hess: np.ndarray | None      # combined curvature per estimator kind
    n_samples: int
    n_dropped: int
    weight_mass: float


_DROPPABLE = (PolicyEvaluationFailed, WeakComplementarity, SingularKKT,
              RankDeficientFit)


def _wants_time(value_fn):
    """True when value_fn takes (s, t) instead of just the state."""
    if value_fn is None:
        return False
    try:
        sig = inspect.signature(value_fn)
    except (TypeError, ValueError):
        return False
    pos = [p for p in sig.parameters.values()
           if p.kind in (p.POSITIONAL_ONLY, p.POSITIONAL_OR_KEYWORD)]
    return len(pos) >= 2


def _at_time(value_fn, t_next, s_next):
    return value_fn(s_next, t_next)


def select_states(horizon, gamma, states_per_episode, rng):
    """Time indices and weights for one episode's discounted state sum.

    ``"all"`` enumerates every step with weight gamma^t.  An integer k draws
    k indices with probability proportional to gamma^t and spreads the total
    discount mass over them, which keeps the estimate unbiased at a fixed
    per-episode budget.
    """
    disc = np.power(gamma, np.arange(horizon))
    if states_per_episode == "all":
        return np.arange(horizon), disc
    k = int(states_per_episode)
    if k >= horizon:
        return np.arange(horizon), disc
    mass = disc.sum()
    idx = rng.choice(horizon, size=k, replace=True, p=disc / mass)
    return idx, np.full(k, mass / k)


def estimate(env, policy, theta, trajectories, kind, rng, *,
             value_fn=None, q_derivatives=None, sigma_explore=None,
             n_explore=None, a_lb=None, a_ub=None,
             states_per_episode="all", max_drop_frac=0.1, ridge=0.0):
    """Estimate grad J and its curvature from closed-loop trajectories.

    Per visited state the policy Jacobian (and for M1 the policy parameter
    Hessian) is evaluated at ``theta``, and action derivatives of Q are taken
    from ``q_derivatives(s, a, scenario) -> (grad, hess)`` when given, else
    from a local quadratic fit with one-step targets against ``value_fn``.
    ``value_fn`` is called as ``value_fn(s_next)`` or, when it declares two
    positional parameters, as ``value_fn(s_next, t_next)`` for time-dependent
    values (finite-horizon value-to-go).  States where any of these fail
    (degenerate active set, failed solve, rank-deficient fit) are dropped;
    losing more than ``max_drop_frac`` of the batch raises
    :class:`EstimatorSampleLoss`.
    """
    kind = EstimatorKind(kind)
    if kind is EstimatorKind.EXACT and q_derivatives is None:
        raise ValueError("EXACT estimator requires q_derivatives")
    if q_derivatives is None and value_fn is None:
        raise ValueError("need either q_derivatives or value_fn")
    if not trajectories:
        raise EmptySampleSet("no trajectories supplied")

    n_ep = len(trajectories)
    timed_value = _wants_time(value_fn)
    jacs, q_grads, q_hess, pol_hess, weights = [], [], [], [], []
    attempted = 0
    dropped = 0
    for traj in trajectories:
        horizon = len(traj)
        idx, w_t = select_states(horizon, env.gamma, states_per_episode, rng)
        for t, w in zip(idx, w_t):
            attempted += 1
            s = traj.states[t]
            a_pi = traj.actions[t]
            try:
                J = policy.jacobian(theta, s)
                if q_derivatives is not None:
                    b, A = q_derivatives(s, a_pi, traj.scenario)
                else:
                    vf = (partial(_at_time, value_fn, t + 1) if timed_value
                          else value_fn)
                    model = fit_local_q(env, s, a_pi, traj.scenario, vf,
                                        sigma_explore, n_explore, rng,
                                        a_lb=a_lb, a_ub=a_ub, ridge=ridge)
                    b, A = model.b, model.A
                T = policy.param_hessian(theta, s) if kind.needs_m1 else None
            except _DROPPABLE:
                dropped += 1
                continue
            jacs.append(np.asarray(J, dtype=float))
            q_grads.append(np.asarray(b, dtype=float))
            if kind.needs_m2:
                q_hess.append(np.asarray(A, dtype=float))
            if kind.needs_m1:
                pol_hess.append(np.asarray(T, dtype=float))
            weights.append(w / n_ep)

    if attempted and dropped / attempted > max_drop_frac:
        raise EstimatorSampleLoss(
            f"dropped {dropped}/{attempted} samples "
            f"(> {max_drop_frac:.0%} allowed)")
    if not jacs:
        raise EmptySampleSet("all samples were dropped")

    jacs = np.stack(jacs)
    q_grads = np.stack(q_grads)
    w = np.asarray(weights)
    grad = policy_gradient(jacs, q_grads, weights=w)
    m1 = m2 = hess = None
    if kind.needs_m2:
        m2 = hessian_m2(jacs, np.stack(q_hess), weights=w)
        hess = m2
    if kind.needs_m1:
        m1 = hessian_m1(np.stack(pol_hess), q_grads, weights=w)
        hess = m1 + m2
    if kind is EstimatorKind.GRAD_ONLY:
        hess = None
    return GradHessEstimate(grad=grad, m1=m1, m2=m2, hess=hess,
                            n_samples=len(weights), n_dropped=dropped,
                            weight_mass=float(w.sum()))
