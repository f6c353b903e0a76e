"""Parametric sensitivities of NLP solutions via the KKT implicit function.

With the primal-dual point ``chi = (z, lam, nu)`` the stationary conditions

    F(chi; zeta) = ( grad_z L(z, lam, nu; zeta) ; h(z; zeta) ; lam * g(z; zeta) )

vanish at a solution.  Under LICQ, strict complementarity and second-order
sufficiency the implicit function theorem gives

    dF/dchi . dchi*/dzeta = - dF/dzeta,

a single linear solve per parameter direction.  Only first and second
derivatives of the Lagrangian appear; nothing of third order is required.
The complementarity rows ``lam * g`` are used verbatim, which requires a
strict complementarity margin: ``min_i (lam_i + |g_i|)`` must exceed
``tol_sc`` or :class:`WeakComplementarity` is raised.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from gnmpc.errors import SingularKKT, WeakComplementarity


@dataclass
class SensitivityResult:
    dz: np.ndarray       # (n_z, n_p)
    dlam: np.ndarray     # (n_g, n_p)
    dnu: np.ndarray      # (n_h, n_p)
    margin: float        # strict complementarity margin
    residual: float      # relative residual of the linear solve


def _dense(J):
    return J.toarray() if sp.issparse(J) else np.asarray(J)


def kkt_residual(problem, z, lam, nu, zeta):
    """Stacked KKT residual F(chi; zeta) = (grad_z L; h; lam*g)."""
    pk = problem.evaluate(z, zeta, order=1)
    r_d = pk.grad_phi.copy()
    if problem.n_g:
        r_d += pk.J_g.T @ lam
    if problem.n_h:
        r_d += pk.J_h.T @ nu
    return np.concatenate([r_d, pk.h, lam * pk.g])


def kkt_matrix(problem, z, lam, nu, zeta, wrt_p=False):
    """Jacobian of F w.r.t. chi (and optionally w.r.t. zeta).

    Row blocks follow F: stationarity, equalities, complementarity.
    Column blocks follow chi = (z, lam, nu).
    """
    n_z, n_g, n_h = problem.n_z, problem.n_g, problem.n_h
    pk = problem.evaluate(z, zeta, lam=lam, nu=nu, order=2, wrt_p=wrt_p)
    J_g = _dense(pk.J_g) if n_g else np.zeros((0, n_z))
    J_h = _dense(pk.J_h) if n_h else np.zeros((0, n_z))
    n = n_z + n_g + n_h
    K = np.zeros((n, n))
    K[:n_z, :n_z] = pk.W
    K[:n_z, n_z:n_z + n_g] = J_g.T
    K[:n_z, n_z + n_g:] = J_h.T
    # equality rows
    K[n_z:n_z + n_h, :n_z] = J_h
    # complementarity rows
    rb = n_z + n_h
    K[rb:, :n_z] = lam[:, None] * J_g
    K[rb:, n_z:n_z + n_g][np.arange(n_g), np.arange(n_g)] = pk.g
    if not wrt_p:
        return K, pk
    Kp = np.zeros((n, problem.n_p))
    Kp[:n_z, :] = pk.W_zp
    Kp[n_z:n_z + n_h, :] = _dense(pk.J_hp) if n_h else np.zeros((0, problem.n_p))
    if n_g:
        Kp[rb:, :] = lam[:, None] * _dense(pk.J_gp)
    return K, Kp, pk


def solve_sensitivities(problem, solution, zeta, tol_sc=1e-6, tol_act=1e-7,
                        cond_max=1e12):
    """Solve dF/dchi . X = -dF/dzeta at an optimal primal-dual point.

    Returns the partitioned sensitivities of (z*, lam*, nu*) w.r.t. zeta.
    Raises WeakComplementarity when the strict complementarity margin is
    below ``tol_sc`` and SingularKKT when the KKT matrix is singular or has
    an estimated condition number above ``cond_max``.  One step of iterative
    refinement is applied before the residual check.
    """
    z, lam, nu = solution.z, solution.lam, solution.nu
    zeta = np.asarray(zeta, dtype=float)
    n_z, n_g, n_h = problem.n_z, problem.n_g, problem.n_h
    margin = np.inf
    if n_g:
        pk0 = problem.evaluate(z, zeta, order=0)
        margin = float(np.min(lam + np.abs(pk0.g)))
        if margin < tol_sc:
            raise WeakComplementarity(
                f"strict complementarity margin {margin:.3e} < {tol_sc:.1e}")
    K, Kp, _ = kkt_matrix(problem, z, lam, nu, zeta, wrt_p=True)
    rhs = -Kp
    try:
        lu, piv = sla.lu_factor(K)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularKKT(f"KKT factorization failed: {exc}") from exc
    anorm = np.abs(K).sum(axis=1).max()
    gecon = sla.get_lapack_funcs(("gecon",), (K,))[0]
    rcond, info = gecon(lu, anorm, norm="1")
    if info != 0 or not np.isfinite(rcond) or rcond <= 0 or 1.0 / rcond > cond_max:
        raise SingularKKT(
            f"KKT condition estimate {np.inf if rcond <= 0 else 1.0 / rcond:.3e} "
            f"exceeds {cond_max:.1e}")
    X = sla.lu_solve((lu, piv), rhs)
    # one iterative refinement pass
    R = rhs - K @ X
    X = X + sla.lu_solve((lu, piv), R)
    res = float(np.linalg.norm(K @ X - rhs) / (1.0 + np.linalg.norm(rhs)))
    if not np.isfinite(res) or res > 1e-8:
        raise SingularKKT(f"sensitivity solve residual {res:.3e} too large")
    return SensitivityResult(dz=X[:n_z], dlam=X[n_z:n_z + n_g],
                             dnu=X[n_z + n_g:], margin=margin, residual=res)
