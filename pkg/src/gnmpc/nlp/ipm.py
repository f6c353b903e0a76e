"""Dense primal-dual interior-point solver for parametric NLPs.

Slack reformulation ``g(z) + s = 0, s >= 0`` with log-barrier on the
slacks, monotone barrier reduction (mu -> mu/10 once the barrier KKT
system is solved to ``kappa_eps * mu``), fraction-to-boundary steps, an
Armijo backtracking line search on an l1 penalty merit function, and
inertia-free regularization (a multiple of the identity added to the
Hessian block whenever factorization or descent fails).  Infeasible
outcomes trigger one retry with an escalated l1 penalty before the
problem is declared infeasible.

The Newton system is condensed to the (z, nu) block; slack and bound
multiplier steps are recovered analytically.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from gnmpc.errors import DimensionMismatch, NonFiniteRhs


class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    MAX_ITER = "max_iter"
    INFEASIBLE = "infeasible"
    NUMERIC_FAILURE = "numeric_failure"


@dataclass
class IpmOptions:
    tol: float = 1e-8
    max_iter: int = 200
    mu0: float = 1e-2
    tau: float = 0.995            # fraction-to-boundary factor
    kappa_eps: float = 10.0       # barrier subproblem tolerance multiple
    armijo: float = 1e-4
    max_backtracks: int = 40
    penalty_init: float = 10.0
    penalty_max: float = 1e8
    reg_max: float = 1e8
    mu_floor_factor: float = 1e-2  # mu floor = tol * factor
    trace: list | None = None      # optional per-iteration KKT dump


@dataclass
class PrimalDualSolution:
    z: np.ndarray
    lam: np.ndarray
    nu: np.ndarray
    s: np.ndarray
    status: SolveStatus
    iterations: int
    phi: float
    kkt_inf: float
    primal_inf: float
    mu: float
    message: str = ""

    @property
    def ok(self):
        return self.status is SolveStatus.OPTIMAL


def _as_dense_T_mul(J, vec):
    """J.T @ vec for dense or sparse J."""
    return J.T @ vec


def _weighted_gram(J, d):
    """J.T @ diag(d) @ J as a dense array."""
    if sp.issparse(J):
        return (J.T.multiply(d) @ J).toarray()
    return (J.T * d) @ J


def _init_point(problem, zeta, warm, mu0, tol):
    n_g = problem.n_g
    if warm is not None:
        z = np.array(warm.z, dtype=float, copy=True)
    elif problem.z_init is not None:
        z = np.asarray(problem.z_init(zeta), dtype=float).copy()
    else:
        z = np.zeros(problem.n_z)
    pk = problem.evaluate(z, zeta, order=0)
    if warm is not None:
        s = np.clip(-pk.g, 1e-8, 1e8)
        lam = np.clip(np.asarray(warm.lam, dtype=float), 1e-10, 1e12)
        nu = np.array(warm.nu, dtype=float, copy=True)
        # entry barrier from average complementarity, kept away from both
        # extremes: too large redoes the whole barrier path, too small traps
        # a shifted iterate against the boundary.  A nearly feasible warm
        # point (tiny primal mismatch) may enter arbitrarily low; a shifted
        # one is floored so the first re-centering steps have room.
        comp = float(np.mean(s * lam)) if n_g else tol
        p_inf = max(float(np.abs(pk.h).max()) if problem.n_h else 0.0,
                    float(np.abs(pk.g + s).max()) if n_g else 0.0)
        mu_lo = 10.0 * tol * 1e-2 if p_inf <= 1e-4 else 1e-6
        mu = float(np.clip(comp, mu_lo, min(1e-3, mu0)))
    else:
        s = np.clip(-pk.g, 1e-2, 1e8)
        lam = np.clip(mu0 / s, 1e-8, 1e4) if n_g else np.zeros(0)
        nu = np.zeros(problem.n_h)
        mu = mu0
    return z, s, lam, nu, mu


def solve(problem, zeta, warm_start=None, options=None):
    """Solve the parametric NLP at parameter ``zeta``.

    warm_start may be a previous :class:`PrimalDualSolution` (typically at a
    nearby parameter); it shortens the barrier path considerably.
    """
    opts = options or IpmOptions()
    zeta = np.asarray(zeta, dtype=float)
    if zeta.shape != (problem.n_p,):
        raise DimensionMismatch(f"zeta must have shape {(problem.n_p,)}")

    result = _solve_once(problem, zeta, warm_start, opts,
                         penalty=opts.penalty_init)
    if result.status is not SolveStatus.OPTIMAL and result.primal_inf > 100 * opts.tol:
        # l1 penalty fallback: restart with an escalated penalty weight.
        retry = _solve_once(problem, zeta, None, opts,
                            penalty=min(1e4 * opts.penalty_init, opts.penalty_max))
        if retry.status is SolveStatus.OPTIMAL:
            return retry
        best = retry if retry.primal_inf < result.primal_inf else result
        if best.primal_inf > 100 * opts.tol:
            best.status = SolveStatus.INFEASIBLE
            best.message = f"primal infeasibility {best.primal_inf:.3e} after restoration"
        return best
    return result


def _solve_once(problem, zeta, warm_start, opts, penalty):
    n_z, n_g, n_h = problem.n_z, problem.n_g, problem.n_h
    z, s, lam, nu, mu = _init_point(problem, zeta, warm_start, opts.mu0, opts.tol)
    mu_floor = max(opts.tol * opts.mu_floor_factor, 1e-16)
    rho = penalty
    delta = 0.0
    it = 0
    e0 = np.inf
    best_e0 = np.inf
    since_best = 0

    def merit(phi_v, g_v, h_v, s_v):
        bar = -mu * float(np.sum(np.log(s_v))) if n_g else 0.0
        return (phi_v + bar
                + rho * (float(np.abs(h_v).sum()) + float(np.abs(g_v + s_v).sum())))

    for it in range(1, opts.max_iter + 1):
        pk = problem.evaluate(z, zeta, lam=lam, nu=nu, order=2)
        r_d = pk.grad_phi.copy()
        if n_g:
            r_d += _as_dense_T_mul(pk.J_g, lam)
        if n_h:
            r_d += _as_dense_T_mul(pk.J_h, nu)
        r_g = pk.g + s if n_g else np.zeros(0)
        r_h = pk.h
        comp = s * lam if n_g else np.zeros(0)
        dual_inf = float(np.abs(r_d).max()) if n_z else 0.0
        primal_inf = max(float(np.abs(r_h).max()) if n_h else 0.0,
                         float(np.abs(r_g).max()) if n_g else 0.0)
        comp_inf = float(np.abs(comp).max()) if n_g else 0.0
        e0 = max(dual_inf, primal_inf, comp_inf)
        if e0 <= opts.tol:
            return PrimalDualSolution(z, lam, nu, s, SolveStatus.OPTIMAL, it,
                                      pk.phi, e0, primal_inf, mu)
        # fail fast when the KKT error plateaus; callers fall back to a
        # cold start, which beats crawling at a useless barrier value
        if e0 < 0.999 * best_e0:
            best_e0 = e0
            since_best = 0
        else:
            since_best += 1
        if since_best > 25:
            return PrimalDualSolution(z, lam, nu, s, SolveStatus.NUMERIC_FAILURE,
                                      it, pk.phi, e0, primal_inf, mu,
                                      "no progress")
        # monotone barrier reduction, superlinear near the solution
        while mu > mu_floor:
            comp_mu = float(np.abs(comp - mu).max()) if n_g else 0.0
            if max(dual_inf, primal_inf, comp_mu) > opts.kappa_eps * mu:
                break
            mu = max(min(mu / 5.0, mu ** 1.4), mu_floor)

        # Newton step on the condensed (z, nu) system
        r_c = comp - mu if n_g else np.zeros(0)
        step = None
        for attempt in range(14):
            M = pk.W.copy()
            if n_g:
                d = lam / s
                M += _weighted_gram(pk.J_g, d)
            if delta:
                M[np.diag_indices_from(M)] += delta
            K = np.zeros((n_z + n_h, n_z + n_h))
            K[:n_z, :n_z] = M
            if n_h:
                J_h = pk.J_h.toarray() if sp.issparse(pk.J_h) else pk.J_h
                K[:n_z, n_z:] = J_h.T
                K[n_z:, :n_z] = J_h
            rhs = np.empty(n_z + n_h)
            rhs_z = -r_d
            if n_g:
                rhs_z = rhs_z - _as_dense_T_mul(pk.J_g, (lam * r_g - r_c) / s)
            rhs[:n_z] = rhs_z
            rhs[n_z:] = -r_h
            if opts.trace is not None:
                opts.trace.append({"iter": it, "mu": mu, "K": K.copy(),
                                   "rhs": rhs.copy(), "z": z.copy(),
                                   "delta": delta, "dual": dual_inf,
                                   "primal": primal_inf, "comp": comp_inf})
            try:
                fac = sla.lu_factor(K)
                sol = sla.lu_solve(fac, rhs)
                # one round of iterative refinement: near the barrier endgame
                # K blends scales across ~10 orders of magnitude and the raw
                # LU direction carries enough roundoff to misdirect the step
                sol += sla.lu_solve(fac, rhs - K @ sol)
            except np.linalg.LinAlgError:
                delta = max(10.0 * delta, 1e-8)
                if delta > opts.reg_max:
                    return PrimalDualSolution(
                        z, lam, nu, s, SolveStatus.NUMERIC_FAILURE, it, pk.phi,
                        e0, primal_inf, mu, "singular KKT system")
                continue
            if not np.all(np.isfinite(sol)):
                delta = max(10.0 * delta, 1e-8)
                if delta > opts.reg_max:
                    return PrimalDualSolution(
                        z, lam, nu, s, SolveStatus.NUMERIC_FAILURE, it, pk.phi,
                        e0, primal_inf, mu, "non-finite step")
                continue
            dz = sol[:n_z]
            dnu = sol[n_z:]
            ds = -r_g - (pk.J_g @ dz) if n_g else np.zeros(0)
            dlam = (-r_c - lam * ds) / s if n_g else np.zeros(0)

            # fraction-to-boundary step limits
            alpha_p = 1.0
            alpha_d = 1.0
            if n_g:
                neg = ds < 0
                if np.any(neg):
                    alpha_p = min(1.0, opts.tau * float(np.min(-s[neg] / ds[neg])))
                negl = dlam < 0
                if np.any(negl):
                    alpha_d = min(1.0, opts.tau * float(np.min(-lam[negl] / dlam[negl])))

            # l1 merit line search on the primal step
            rho = max(rho, 1.5 * max(
                float(np.abs(lam + dlam).max()) if n_g else 0.0,
                float(np.abs(nu + dnu).max()) if n_h else 0.0, 1.0))
            m0 = merit(pk.phi, pk.g, pk.h, s)
            dmerit = float(pk.grad_phi @ dz)
            if n_g:
                dmerit -= mu * float(np.sum(ds / s))
            dmerit -= rho * (float(np.abs(r_h).sum()) + float(np.abs(r_g).sum()))

            def eval_merit(z_t, s_t):
                try:
                    pk_t = problem.evaluate(z_t, zeta, order=0)
                except (ArithmeticError, NonFiniteRhs):
                    return np.inf, None
                return merit(pk_t.phi, pk_t.g, pk_t.h, s_t), pk_t

            alpha = alpha_p
            ok = False
            soc_left = 1
            for _ in range(opts.max_backtracks):
                z_t = z + alpha * dz
                s_t = s + alpha * ds if n_g else s
                m_t, pk_t = eval_merit(z_t, s_t)
                bound = m0 + opts.armijo * alpha * min(dmerit, 0.0)
                if m_t <= bound:
                    ok = True
                    break
                if soc_left and pk_t is not None:
                    # Second-order correction: the merit rejects long steps
                    # because the constraint violation grows quadratically
                    # along them.  Re-solve the same KKT system against the
                    # violation at the trial point and shift the trial by
                    # the correction before shortening the step.
                    soc_left -= 1
                    g_t = pk_t.g + s_t if n_g else np.zeros(0)
                    rhs_c = np.zeros(n_z + n_h)
                    if n_g:
                        rhs_c[:n_z] = -_as_dense_T_mul(pk.J_g, lam * g_t / s)
                    rhs_c[n_z:] = -pk_t.h
                    try:
                        sol_c = sla.lu_solve(fac, rhs_c)
                    except np.linalg.LinAlgError:
                        sol_c = None
                    if sol_c is not None and np.all(np.isfinite(sol_c)):
                        dz_c = sol_c[:n_z]
                        ds_c = (-g_t - (pk.J_g @ dz_c)) if n_g else np.zeros(0)
                        a_c = 1.0
                        if n_g:
                            negc = ds_c < 0
                            if np.any(negc):
                                a_c = min(1.0, opts.tau * float(
                                    np.min(-s_t[negc] / ds_c[negc])))
                        z_c = z_t + a_c * dz_c
                        s_c = s_t + a_c * ds_c if n_g else s_t
                        m_c, _ = eval_merit(z_c, s_c)
                        if m_c <= bound:
                            dz = (z_c - z) / alpha
                            ds = (s_c - s) / alpha if n_g else ds
                            ok = True
                            break
                alpha *= 0.5
                if alpha < 1e-14:
                    break
            if ok:
                cand = (alpha, dz, ds, dlam, dnu, alpha_d)
                if alpha >= 0.1 or delta >= 1e3 or since_best < 5:
                    step = cand
                    break
                # Stagnating AND only a sliver of the direction survives the
                # boundary and merit truncation.  That is the signature of a
                # near-singular curvature valley: the Newton step is
                # enormous, and recomputing it undamped just repeats the
                # crawl.  Keep the best sliver as a fallback and damp gently
                # so delta settles near the residual scale instead of
                # overshooting it.  Ordinary boundary approaches do take
                # small steps occasionally, but they keep improving the KKT
                # error, so the stagnation guard keeps them undamped.
                if step is None or alpha > step[0]:
                    step = cand
                delta = max(3.0 * delta, 1e-8)
                continue
            delta = max(10.0 * delta, 1e-8)
            if delta > opts.reg_max:
                return PrimalDualSolution(
                    z, lam, nu, s, SolveStatus.NUMERIC_FAILURE, it, pk.phi,
                    e0, primal_inf, mu, "line search failed")
        if step is None:
            return PrimalDualSolution(z, lam, nu, s, SolveStatus.NUMERIC_FAILURE,
                                      it, pk.phi, e0, primal_inf, mu,
                                      "no acceptable step")
        alpha, dz, ds, dlam, dnu, alpha_d = step
        if opts.trace is not None:
            row_p = row_d = -1
            if n_g:
                neg = ds < 0
                if np.any(neg):
                    row_p = int(np.flatnonzero(neg)[np.argmin(-s[neg] / ds[neg])])
                negl = dlam < 0
                if np.any(negl):
                    row_d = int(np.flatnonzero(negl)[
                        np.argmin(-lam[negl] / dlam[negl])])
            opts.trace.append({"iter": it, "accept": True, "alpha": alpha,
                               "alpha_d": alpha_d, "delta": delta,
                               "row_p": row_p, "row_d": row_d})
        z = z + alpha * dz
        if n_g:
            s = np.maximum(s + alpha * ds, 1e-300)
            lam = np.clip(lam + alpha_d * dlam, 1e-16, 1e16)
        nu = nu + alpha_d * dnu
        delta = delta / 2.0 if delta > 1e-12 else 0.0

    pk = problem.evaluate(z, zeta, order=0)
    r_g = pk.g + s if n_g else np.zeros(0)
    primal_inf = max(float(np.abs(pk.h).max()) if n_h else 0.0,
                     float(np.abs(r_g).max()) if n_g else 0.0)
    return PrimalDualSolution(z, lam, nu, s, SolveStatus.MAX_ITER,
                              opts.max_iter, pk.phi, e0, primal_inf, mu,
                              "iteration limit")
