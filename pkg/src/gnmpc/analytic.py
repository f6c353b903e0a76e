"""Scalar linear-quadratic case with closed-form performance and curvature.

System: s' = s + a + w,  w ~ N(0, sigma_w^2),  s_0 ~ N(0, sigma_0^2),
reward r = -(s^2 + a^2)/2, policy pi_theta(s) = -theta^2 s (so the closed
loop is s' = (1 - theta^2) s + w and the squared parameterization keeps the
problem genuinely nonlinear in theta).

Everything of interest is available in closed form: the quadratic value
function V(s) = p s^2 + q, the discounted performance J(theta), its first
and second derivatives, the discounted state second moment, and the two
curvature surrogates

    M1 = E[ d2pi/dtheta2 * dQ/da ]          ( = J'/theta here )
    M2 = E[ (dpi/dtheta)^2 * d2Q/da2 ]

M1 vanishes at the optimum and M2 equals J'' there, while away from it
M1 + M2 differs from J'' by the state-distribution derivative the sampled
decomposition ignores.  That makes this case the ground truth for the
estimator and optimizer tests: every sampled quantity has an exact target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from gnmpc.errors import DegenerateDiscount, DivergedIterate, SingularHessian

ITERATION_METHODS = ("gradient", "newton_exact", "newton_m1m2", "gauss_newton")


@dataclass(frozen=True)
class AnalyticCase:
    # noise defaults keep |1 + 0.1 J''(theta*)| ~ 0.7, so a 0.1-rate
    # gradient ascent contracts monotonically from theta_0 = 0.6
    gamma: float = 0.9
    sigma0_sq: float = 0.4
    sigma_w_sq: float = 0.005

    @property
    def noise_mass(self):
        """sigma_0^2 + gamma sigma_w^2 / (1-gamma); scales J and E[s^2]."""
        return self.sigma0_sq + self.gamma * self.sigma_w_sq / (1.0 - self.gamma)

    # -- value function -----------------------------------------------------
    def _denom(self, theta):
        theta = np.asarray(theta, dtype=float)
        c = 1.0 - theta ** 2
        D = 1.0 - self.gamma * c ** 2
        if np.any(D <= 1e-12):
            raise DegenerateDiscount(
                "closed loop is not discounted-stable at theta = "
                f"{theta[D <= 1e-12] if theta.ndim else theta}")
        return c, D

    def value_quadratic_coeff(self, theta):
        """p(theta) in V(s) = p s^2 + q."""
        theta = np.asarray(theta, dtype=float)
        _, D = self._denom(theta)
        return -0.5 * (1.0 + theta ** 4) / D

    def value_offset(self, theta):
        """q(theta) in V(s) = p s^2 + q."""
        p = self.value_quadratic_coeff(theta)
        return self.gamma * self.sigma_w_sq * p / (1.0 - self.gamma)

    # -- performance and derivatives -----------------------------------------
    def performance(self, theta):
        """J(theta) = E[V(s_0)] = p sigma_0^2 + q."""
        return self.value_quadratic_coeff(theta) * self.noise_mass

    def grad(self, theta):
        theta = np.asarray(theta, dtype=float)
        c, D = self._denom(theta)
        p = -0.5 * (1.0 + theta ** 4) / D
        dD = 4.0 * self.gamma * theta * c
        du = -2.0 * theta ** 3
        dp = (du - p * dD) / D
        return dp * self.noise_mass

    def hess(self, theta):
        theta = np.asarray(theta, dtype=float)
        c, D = self._denom(theta)
        u = -0.5 * (1.0 + theta ** 4)
        du = -2.0 * theta ** 3
        d2u = -6.0 * theta ** 2
        dD = 4.0 * self.gamma * theta * c
        d2D = 4.0 * self.gamma * (1.0 - 3.0 * theta ** 2)
        d2p = (d2u / D - 2.0 * du * dD / D ** 2
               - u * d2D / D ** 2 + 2.0 * u * dD ** 2 / D ** 3)
        return d2p * self.noise_mass

    def disc_state_moment(self, theta):
        """sum_t gamma^t E[s_t^2] under the closed loop."""
        _, D = self._denom(theta)
        return self.noise_mass / D

    # -- curvature surrogates -----------------------------------------------
    def m1(self, theta):
        theta = np.asarray(theta, dtype=float)
        c, _ = self._denom(theta)
        p = self.value_quadratic_coeff(theta)
        return -2.0 * (theta ** 2 + 2.0 * self.gamma * p * c) \
            * self.disc_state_moment(theta)

    def m2(self, theta):
        theta = np.asarray(theta, dtype=float)
        p = self.value_quadratic_coeff(theta)
        return 4.0 * theta ** 2 * (2.0 * self.gamma * p - 1.0) \
            * self.disc_state_moment(theta)

    def theta_star(self):
        g = self.gamma
        return math.sqrt((math.sqrt(1.0 + 4.0 * g * g) - 1.0) / (2.0 * g))

    # -- exact action-value derivatives ---------------------------------------
    def q_action_derivatives(self, theta):
        """(s, a, scenario) -> (dQ/da, d2Q/da2), exact at any action.

        Q(s, a) = r(s, a) + gamma E[V(s + a + w)] with the quadratic V at
        ``theta``, so dQ/da = -a + 2 gamma p (s + a) and d2Q/da2 = 2 gamma p - 1.
        """
        p = float(self.value_quadratic_coeff(_scalar(theta)))
        two_gp = 2.0 * self.gamma * p

        def q_derivs(s, a, scenario):
            b = -a + two_gp * (s + a)
            A = np.array([[two_gp - 1.0]])
            return np.atleast_1d(b), A

        return q_derivs


def _scalar(theta):
    return float(np.asarray(theta, dtype=float).ravel()[0])


class AnalyticEnv:
    """Environment-protocol wrapper around the scalar case."""

    n_x = 1
    n_a = 1

    def __init__(self, case: AnalyticCase | None = None):
        self.case = case or AnalyticCase()
        self.gamma = self.case.gamma
        self._sigma0 = math.sqrt(self.case.sigma0_sq)
        self._sigma_w = math.sqrt(self.case.sigma_w_sq)

    def sample_scenario(self, rng):
        return {"s0": np.array([rng.normal(0.0, self._sigma0)])}

    def reset(self, scenario):
        return np.asarray(scenario["s0"], dtype=float)

    def transition(self, s, a, scenario, rng):
        w = rng.normal(0.0, self._sigma_w) if rng is not None else 0.0
        return np.array([s[0] + a[0] + w])

    def reward(self, s, a, s_next):
        return float(-0.5 * (s[0] ** 2 + a[0] ** 2))


class AnalyticPolicy:
    """pi_theta(s) = -theta^2 s with exact parameter derivatives."""

    def reset(self):
        pass

    def act(self, theta, s):
        th = _scalar(theta)
        return np.array([-th * th * s[0]])

    def jacobian(self, theta, s):
        th = _scalar(theta)
        return np.array([[-2.0 * th * s[0]]])

    def param_hessian(self, theta, s):
        return np.array([[[-2.0 * s[0]]]])


def run_exact_iteration(case, method, theta0, n_iter=30, alpha=0.1,
                        tol=1e-13, theta_max=10.0):
    """Iterate one parameter-update rule on the closed-form quantities.

    gradient      theta <- theta + alpha J'
    newton_exact  theta <- theta - J'/J''
    newton_m1m2   theta <- theta - J'/(M1 + M2)
    gauss_newton  theta <- theta - J'/M2
    """
    if method not in ITERATION_METHODS:
        raise ValueError(f"unknown method {method!r}")
    theta = float(theta0)
    thetas = [theta]
    for _ in range(n_iter):
        try:
            dJ = float(case.grad(theta))
            if method == "gradient":
                step = alpha * dJ
            else:
                if method == "newton_exact":
                    H = float(case.hess(theta))
                elif method == "newton_m1m2":
                    H = float(case.m1(theta) + case.m2(theta))
                else:
                    H = float(case.m2(theta))
                if abs(H) < 1e-14:
                    raise SingularHessian(f"curvature vanished at theta={theta}")
                step = -dJ / H
        except DegenerateDiscount as exc:
            raise DivergedIterate(
                f"{method} iteration left the stable region: {exc}") from exc
        theta = theta + step
        if not np.isfinite(theta) or abs(theta) > theta_max:
            raise DivergedIterate(
                f"{method} iteration left the stable region at theta={theta}")
        thetas.append(theta)
        if abs(step) <= tol:
            break
    thetas = np.asarray(thetas)
    # J is even in theta (the policy depends on theta^2), so +-theta* are
    # the same policy; measure distance to the nearer one
    errors = np.abs(np.abs(thetas) - case.theta_star())
    return IterationResult(method=method, thetas=thetas, errors=errors,
                           iterations=len(thetas) - 1,
                           converged=bool(errors[-1] < 1e-8))


@dataclass
class IterationResult:
    method: str
    thetas: np.ndarray
    errors: np.ndarray
    iterations: int
    converged: bool


def performance_grid(case, thetas):
    """Closed-form J, J', J'', M1, M2 tabulated on a parameter grid."""
    thetas = np.asarray(thetas, dtype=float)
    return {
        "theta": thetas,
        "J": case.performance(thetas),
        "dJ": case.grad(thetas),
        "d2J": case.hess(thetas),
        "m1": case.m1(thetas),
        "m2": case.m2(thetas),
    }


def method_error_table(case, theta0, n_iter=25, alpha=0.1,
                       methods=ITERATION_METHODS):
    """Per-iteration distance to theta* for each update rule (ragged rows
    padded with the final error, so columns align across methods)."""
    table = {}
    for method in methods:
        res = run_exact_iteration(case, method, theta0, n_iter=n_iter,
                                  alpha=alpha)
        err = res.errors
        if err.size < n_iter + 1:
            err = np.concatenate([err, np.full(n_iter + 1 - err.size, err[-1])])
        table[method] = err
    return table
