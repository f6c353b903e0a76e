"""Ascent updates on sampled gradients, first order and Newton-like.

All steps are pure: they take an :class:`OptimizerState` and return a new
one.  The Newton-like updates keep curvature usable far from the optimum by
(a) averaging sampled Hessians with an exponential moving average seeded at
-1/omega * I, and (b) projecting the averaged matrix onto the strictly
negative-definite cone before inverting, so every step is an ascent
direction regardless of sampling noise.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from gnmpc.errors import NonFiniteGradient, SingularHessian


@dataclass(frozen=True)
class OptimizerState:
    theta: np.ndarray
    k: int = 0                    # number of updates applied
    m: np.ndarray | None = None   # gradient EMA
    v: np.ndarray | None = None   # squared-gradient EMA (adam)
    D: np.ndarray | None = None   # curvature EMA

    @classmethod
    def init(cls, theta0):
        theta0 = np.asarray(theta0, dtype=float).copy()
        p = theta0.size
        return cls(theta=theta0, k=0, m=np.zeros(p), v=np.zeros(p), D=None)


def _check_finite(name, arr):
    if arr is None or not np.all(np.isfinite(arr)):
        raise NonFiniteGradient(f"{name} contains non-finite entries")


def step_gradient_ascent(state, grad, alpha):
    grad = np.asarray(grad, dtype=float)
    _check_finite("gradient", grad)
    return replace(state, theta=state.theta + alpha * grad, k=state.k + 1)


def step_momentum(state, grad, alpha, beta):
    """Bias-corrected gradient EMA ascent: first step equals plain ascent."""
    grad = np.asarray(grad, dtype=float)
    _check_finite("gradient", grad)
    k = state.k + 1
    m = beta * state.m + (1.0 - beta) * grad
    m_hat = m / (1.0 - beta ** k)
    return replace(state, theta=state.theta + alpha * m_hat, k=k, m=m)


def step_adam(state, grad, alpha, beta1=0.9, beta2=0.999, eps=1e-8):
    grad = np.asarray(grad, dtype=float)
    _check_finite("gradient", grad)
    k = state.k + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** k)
    v_hat = v / (1.0 - beta2 ** k)
    theta = state.theta + alpha * m_hat / (np.sqrt(v_hat) + eps)
    return replace(state, theta=theta, k=k, m=m, v=v)


def project_negdef(B, eps_scale=1e-6):
    """Nearest (in eigenvalues) strictly negative-definite symmetric matrix.

    Eigenvalues above -eps are clamped to -eps with
    eps = eps_scale * max(1, |lambda|_max); compliant matrices pass through
    unchanged.
    """
    B = np.asarray(B, dtype=float)
    _check_finite("curvature matrix", B)
    B = 0.5 * (B + B.T)
    lam, V = np.linalg.eigh(B)
    eps = eps_scale * max(1.0, float(np.abs(lam).max()))
    if lam[-1] <= -eps:
        return B
    lam = np.minimum(lam, -eps)
    return (V * lam) @ V.T


def step_newton_like(state, grad, hess, alpha=1.0, eps_scale=1e-6):
    """theta <- theta - alpha * proj(hess)^{-1} grad (ascent for negdef hess)."""
    grad = np.asarray(grad, dtype=float)
    _check_finite("gradient", grad)
    if hess is None:
        raise SingularHessian("newton step needs a curvature estimate")
    H = project_negdef(hess, eps_scale)
    try:
        delta = -np.linalg.solve(H, grad)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - proj prevents it
        raise SingularHessian(str(exc)) from exc
    return replace(state, theta=state.theta + alpha * delta, k=state.k + 1)


def step_gn_momentum(state, grad, hess, alpha, beta, eta, omega_inv,
                     eps_scale=1e-6):
    """Newton-flavored ascent with gradient momentum and curvature EMA.

    m_k = beta m_{k-1} + (1-beta) g_k,     m^ = m_k / (1 - beta^k)
    D_k = eta D_{k-1} + (1-eta) B_k,       D^ = D_k / (1 - eta^{k+1})
    theta <- theta - alpha * proj(D^)^{-1} m^

    D_0 = -1/omega * I counts as the zeroth curvature sample, hence the
    k+1 in its bias correction.
    """
    grad = np.asarray(grad, dtype=float)
    _check_finite("gradient", grad)
    if hess is None:
        raise SingularHessian("curvature EMA needs a Hessian estimate")
    B = np.asarray(hess, dtype=float)
    _check_finite("curvature matrix", B)
    p = state.theta.size
    D_prev = state.D if state.D is not None else -omega_inv * np.eye(p)
    k = state.k + 1
    m = beta * state.m + (1.0 - beta) * grad
    D = eta * D_prev + (1.0 - eta) * B
    m_hat = m / (1.0 - beta ** k)
    D_hat = D / (1.0 - eta ** (k + 1))
    H = project_negdef(D_hat, eps_scale)
    delta = -np.linalg.solve(H, m_hat)
    return replace(state, theta=state.theta + alpha * delta, k=k, m=m, D=D)


def ema_debias_factor(k, eta):
    """Divisor applied to D_k; k curvature samples plus the seed."""
    return 1.0 - eta ** (k + 1)


def ema_weights(k, eta):
    """Effective sample weights inside the debiased curvature EMA.

    Entry 0 weights the seed matrix expressed as a sample,
    B_0' = D_0 / (1 - eta); entries 1..k weight B_1..B_k.  The weights sum
    to one for every k, which is what makes the debiased EMA a proper
    weighted average of curvature samples.
    """
    j = np.arange(1, k + 1)
    w = np.empty(k + 1)
    denom = 1.0 - eta ** (k + 1)
    w[0] = eta ** k * (1.0 - eta) / denom
    w[1:] = np.power(eta, k - j) * (1.0 - eta) / denom
    return w


@dataclass
class ConvergenceReport:
    converged: bool
    reason: str = ""


def check_convergence(grad, step, tol_grad=1e-6, tol_step=1e-8):
    """Stationarity test on the latest update."""
    g_inf = float(np.abs(grad).max()) if np.asarray(grad).size else 0.0
    s_inf = float(np.abs(step).max()) if np.asarray(step).size else 0.0
    if g_inf <= tol_grad:
        return ConvergenceReport(True, f"|grad|_inf = {g_inf:.3e} <= {tol_grad:g}")
    if s_inf <= tol_step:
        return ConvergenceReport(True, f"|step|_inf = {s_inf:.3e} <= {tol_step:g}")
    return ConvergenceReport(False)
