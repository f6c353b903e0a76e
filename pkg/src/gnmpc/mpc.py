"""Multiple-shooting transcription of parameterized OCPs and the MPC policy.

The finite-horizon problem

    min  sum_i l_theta(x_i, u_i) + V_f,theta(x_N) + w.sigma_i (+ w_f.sigma_N)
    s.t. x_{i+1} = f_theta(x_i, u_i),      x_0 = s (a parameter)
         u_lb <= u_i <= u_ub
         x_lb - sigma_i <= x_i <= x_ub + sigma_i,  sigma_i >= 0

is transcribed with decisions z = (u_0..u_{N-1}, x_1..x_N, sigma_0..sigma_N)
and NLP parameters zeta = (theta, s).  State boxes are softened with
per-component slacks and a linear penalty (plus a tiny quadratic term that
keeps the slack block strictly convex); input bounds are hard.  The
policy action is the first input of the optimizer, pi_theta(s) = u_0*, and
its parameter Jacobian comes from the KKT sensitivity system at the
solution.  Second parameter derivatives of the policy are obtained by
central finite differences of first-order sensitivities -- nothing beyond
second derivatives of the Lagrangian is ever formed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from gnmpc.errors import OcpSpecError, PolicyEvaluationFailed
from gnmpc.nlp.ipm import IpmOptions, PrimalDualSolution, solve
from gnmpc.nlp.problem import ParametricNLP
from gnmpc.nlp.sensitivity import solve_sensitivities


@dataclass
class OcpSpec:
    """Declarative description of one optimal control problem family.

    ``dynamics``, ``stage_cost`` and ``terminal_cost`` receive component
    lists (hyper-dual numbers or plain arrays) and must be built from smooth
    arithmetic: ``dynamics(x, u, theta) -> list of n_x``,
    ``stage_cost(x, u, theta) -> scalar``, ``terminal_cost(x, theta)``.
    """

    n_x: int
    n_u: int
    n_theta: int
    horizon: int
    dynamics: Callable
    stage_cost: Callable
    terminal_cost: Callable | None = None
    u_lb: np.ndarray | None = None
    u_ub: np.ndarray | None = None
    x_lb: np.ndarray | None = None
    x_ub: np.ndarray | None = None
    slack_weight: float = 100.0
    terminal_slack_weight: float = 100.0
    slack_reg: float = 1e-2   # quadratic slack term, see compile_ocp
    u_guess: Callable | None = None   # (theta, s) -> initial input, cold starts

    def __post_init__(self):
        if self.horizon < 1:
            raise OcpSpecError("horizon must be >= 1")
        for name in ("u_lb", "u_ub", "x_lb", "x_ub"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float)
                setattr(self, name, v)
                want = self.n_u if name.startswith("u") else self.n_x
                if v.shape != (want,):
                    raise OcpSpecError(f"{name} must have shape ({want},)")
        if (self.u_lb is None) != (self.u_ub is None):
            raise OcpSpecError("both or neither input bound must be given")
        if (self.x_lb is None) != (self.x_ub is None):
            raise OcpSpecError("both or neither state bound must be given")
        if self.u_lb is not None and np.any(self.u_lb >= self.u_ub):
            raise OcpSpecError("u_lb must be elementwise below u_ub")


@dataclass
class CompiledOcp:
    spec: OcpSpec
    nlp: ParametricNLP
    idx_u: np.ndarray          # (N, n_u) decision indices
    idx_x: np.ndarray          # (N, n_x) indices of x_1..x_N
    idx_sigma: np.ndarray | None   # (N+1, n_x)
    rows_dyn: np.ndarray       # (N, n_x) equality rows
    rows_ineq_stage: list = field(default_factory=list)  # per-family (K, w) rows
    n_theta: int = 0

    @property
    def zeta_dim(self):
        return self.n_theta + self.spec.n_x

    def pack_zeta(self, theta, s):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        s = np.asarray(s, dtype=float)
        if theta.shape != (self.n_theta,) or s.shape != (self.spec.n_x,):
            raise OcpSpecError("theta/state dimensions do not match the OCP")
        return np.concatenate([theta, s])

    def shift_warm(self, sol):
        """Shift a solution one stage forward (receding-horizon warm start)."""
        z = sol.z.copy()
        lam = sol.lam.copy()
        nu = sol.nu.copy()
        for idx in (self.idx_u, self.idx_x, self.idx_sigma):
            if idx is not None and idx.shape[0] > 1:
                z[idx[:-1].ravel()] = sol.z[idx[1:].ravel()]
        if self.rows_dyn.shape[0] > 1:
            nu[self.rows_dyn[:-1].ravel()] = sol.nu[self.rows_dyn[1:].ravel()]
        for rows in self.rows_ineq_stage:
            if rows.shape[0] > 1:
                lam[rows[:-1].ravel()] = sol.lam[rows[1:].ravel()]
        return PrimalDualSolution(z=z, lam=lam, nu=nu, s=sol.s, status=sol.status,
                                  iterations=0, phi=sol.phi, kkt_inf=sol.kkt_inf,
                                  primal_inf=sol.primal_inf, mu=sol.mu)


def compile_ocp(spec: OcpSpec) -> CompiledOcp:
    """Transcribe an :class:`OcpSpec` into a parametric NLP."""
    N, n_x, n_u, n_th = spec.horizon, spec.n_x, spec.n_u, spec.n_theta
    soft = spec.x_lb is not None
    n_z = N * n_u + N * n_x + (soft * (N + 1) * n_x)
    n_p = n_th + n_x
    nlp = ParametricNLP(n_z, n_p, name="ocp")

    off_x = N * n_u
    off_s = off_x + N * n_x
    idx_u = np.arange(N * n_u).reshape(N, n_u)
    idx_x = off_x + np.arange(N * n_x).reshape(N, n_x)   # x_1 .. x_N
    idx_sigma = (off_s + np.arange((N + 1) * n_x).reshape(N + 1, n_x)
                 if soft else None)
    th_idx = np.arange(n_th)
    s_idx = n_th + np.arange(n_x)

    # -- dynamics equalities -------------------------------------------------
    # Blocks carry only f(x_i, u_i, theta); the -x_{i+1} part is affine and
    # stays out of the hyper-dual seed space.
    def dyn_stage0(zv, pv):
        th = pv[:n_th]
        x0 = pv[n_th:]
        return spec.dynamics(x0, zv, th)

    rows0 = nlp.add_nonlinear_block(
        "eq", dyn_stage0, idx_u[0][None, :],
        np.concatenate([th_idx, s_idx]), n_x)
    for j in range(n_x):
        nlp.add_linear_terms("eq", rows0[0, j], z_cols=[idx_x[0, j]],
                             z_coeffs=[-1.0])

    rows_rest = None
    if N > 1:
        def dyn_stage(zv, pv):
            x = zv[:n_x]
            u = zv[n_x:]
            return spec.dynamics(x, u, pv)

        zidx = np.concatenate([idx_x[:-1], idx_u[1:]], axis=1)
        rows_rest = nlp.add_nonlinear_block("eq", dyn_stage, zidx, th_idx, n_x)
        for i in range(N - 1):
            for j in range(n_x):
                nlp.add_linear_terms("eq", rows_rest[i, j],
                                     z_cols=[idx_x[i + 1, j]], z_coeffs=[-1.0])
    rows_dyn = (np.concatenate([rows0, rows_rest], axis=0)
                if rows_rest is not None else rows0)

    # -- input bounds ----------------------------------------------------------
    rows_fams = []
    if spec.u_lb is not None:
        fin_ub = np.isfinite(spec.u_ub)
        fin_lb = np.isfinite(spec.u_lb)
        n_rows = int(fin_ub.sum() + fin_lb.sum()) * N
        terms, base = nlp.add_linear_rows("ineq", n_rows)
        fam = []
        r = base
        for i in range(N):
            stage_rows = []
            for j in range(n_u):
                if fin_ub[j]:
                    terms.add(r, z_cols=[idx_u[i, j]], z_coeffs=[1.0],
                              const=-spec.u_ub[j])
                    stage_rows.append(r); r += 1
                if fin_lb[j]:
                    terms.add(r, z_cols=[idx_u[i, j]], z_coeffs=[-1.0],
                              const=spec.u_lb[j])
                    stage_rows.append(r); r += 1
            fam.append(stage_rows)
        rows_fams.append(np.asarray(fam, dtype=int))

    # -- soft state boxes -------------------------------------------------------
    if soft:
        fin_ub = np.isfinite(spec.x_ub)
        fin_lb = np.isfinite(spec.x_lb)
        per_stage = int(fin_ub.sum() + fin_lb.sum())
        terms, base = nlp.add_linear_rows("ineq", per_stage * (N + 1))
        fam = []
        r = base
        for i in range(N + 1):
            stage_rows = []
            for j in range(n_x):
                sig = idx_sigma[i, j]
                if fin_ub[j]:
                    if i == 0:
                        terms.add(r, z_cols=[sig], z_coeffs=[-1.0],
                                  p_cols=[s_idx[j]], p_coeffs=[1.0],
                                  const=-spec.x_ub[j])
                    else:
                        terms.add(r, z_cols=[idx_x[i - 1, j], sig],
                                  z_coeffs=[1.0, -1.0], const=-spec.x_ub[j])
                    stage_rows.append(r); r += 1
                if fin_lb[j]:
                    if i == 0:
                        terms.add(r, z_cols=[sig], z_coeffs=[-1.0],
                                  p_cols=[s_idx[j]], p_coeffs=[-1.0],
                                  const=spec.x_lb[j])
                    else:
                        terms.add(r, z_cols=[idx_x[i - 1, j], sig],
                                  z_coeffs=[-1.0, -1.0], const=spec.x_lb[j])
                    stage_rows.append(r); r += 1
            fam.append(stage_rows)
        rows_fams.append(np.asarray(fam, dtype=int))
        # sigma >= 0
        terms, base = nlp.add_linear_rows("ineq", (N + 1) * n_x)
        fam = []
        r = base
        for i in range(N + 1):
            stage_rows = []
            for j in range(n_x):
                terms.add(r, z_cols=[idx_sigma[i, j]], z_coeffs=[-1.0])
                stage_rows.append(r); r += 1
            fam.append(stage_rows)
        rows_fams.append(np.asarray(fam, dtype=int))
        # linear slack penalty
        for i in range(N + 1):
            w = spec.terminal_slack_weight if i == N else spec.slack_weight
            nlp.add_linear_objective(z_cols=idx_sigma[i],
                                     z_coeffs=[w] * n_x)
        # tiny quadratic slack term: a pinned slack whose sign row and box
        # row are both active has non-unique multipliers, which stalls the
        # interior-point iteration; strict convexity in sigma removes that
        if spec.slack_reg > 0.0:
            def slack_quad(zv, pv, _w=spec.slack_reg):
                acc = zv[0] * zv[0]
                for v in zv[1:]:
                    acc = acc + v * v
                return [_w * acc]

            nlp.add_nonlinear_block("obj", slack_quad, idx_sigma,
                                    np.empty(0, dtype=int), 1)

    # -- costs -------------------------------------------------------------------
    def cost_stage0(zv, pv):
        th = pv[:n_th]
        x0 = pv[n_th:]
        return [spec.stage_cost(x0, zv, th)]

    nlp.add_nonlinear_block("obj", cost_stage0, idx_u[0][None, :],
                            np.concatenate([th_idx, s_idx]), 1)
    if N > 1:
        def cost_stage(zv, pv):
            x = zv[:n_x]
            u = zv[n_x:]
            return [spec.stage_cost(x, u, pv)]

        zidx = np.concatenate([idx_x[:-1], idx_u[1:]], axis=1)
        nlp.add_nonlinear_block("obj", cost_stage, zidx, th_idx, 1)
    if spec.terminal_cost is not None:
        nlp.add_nonlinear_block(
            "obj", lambda zv, pv: [spec.terminal_cost(zv, pv)],
            idx_x[-1][None, :], th_idx, 1)

    nlp.finalize()

    # -- cold-start initializer: forward simulation under constant inputs -----
    u_mid = (0.5 * (spec.u_lb + spec.u_ub) if spec.u_lb is not None
             else np.zeros(n_u))

    def z_init(zeta):
        th = [zeta[k] for k in range(n_th)]
        z0 = np.zeros(n_z)
        x = [float(v) for v in zeta[n_th:]]
        u0 = u_mid
        if spec.u_guess is not None:
            u0 = np.asarray(spec.u_guess(zeta[:n_th], zeta[n_th:]), dtype=float)
            if spec.u_lb is not None:
                u0 = np.clip(u0, spec.u_lb, spec.u_ub)
        u0 = list(u0)
        for i in range(N):
            z0[idx_u[i]] = u0
            x = [float(v) for v in spec.dynamics(x, u0, th)]
            z0[idx_x[i]] = x
            if soft:
                viol = np.maximum(np.asarray(x) - spec.x_ub,
                                  spec.x_lb - np.asarray(x))
                z0[idx_sigma[i + 1]] = np.maximum(viol, 0.0) + 1e-2
        if soft:
            s0 = zeta[n_th:]
            viol = np.maximum(s0 - spec.x_ub, spec.x_lb - s0)
            z0[idx_sigma[0]] = np.maximum(viol, 0.0) + 1e-2
        return z0

    nlp.z_init = z_init
    return CompiledOcp(spec=spec, nlp=nlp, idx_u=idx_u, idx_x=idx_x,
                       idx_sigma=idx_sigma, rows_dyn=rows_dyn,
                       rows_ineq_stage=rows_fams, n_theta=n_th)


class MpcPolicy:
    """Deterministic policy pi_theta(s) = first input of the OCP optimizer.

    Keeps a warm-start cache (previous solution, shifted by one stage) so
    closed-loop rollouts re-solve cheaply.  ``reset()`` clears the cache at
    episode boundaries.
    """

    def __init__(self, ocp: CompiledOcp, options: IpmOptions | None = None,
                 tol_sc=1e-6, tol_act=1e-7, memoize=False):
        self.ocp = ocp
        self.options = options or IpmOptions(tol=1e-8, max_iter=300)
        self.tol_sc = tol_sc
        self.tol_act = tol_act
        # optional multi-point solution store; unlike the warm cache it
        # survives reset() so derivative passes over a finished batch of
        # rollouts can reuse every visited solve.  Owner clears it.
        self._memo = {} if memoize else None
        self._warm = None
        self._warm_key = None
        self._cache_key = None
        self._cache_sol = None
        self.last_solution = None

    @property
    def n_theta(self):
        return self.ocp.n_theta

    @property
    def n_a(self):
        return self.ocp.spec.n_u

    def reset(self):
        self._warm = None
        self._warm_key = None
        self._cache_key = None
        self._cache_sol = None

    def _key(self, theta, s):
        return (np.asarray(theta, float).tobytes(),
                np.asarray(s, float).tobytes())

    def clear_memo(self):
        if self._memo is not None:
            self._memo.clear()

    def memoize_solution(self, theta, s, sol):
        """Seed the solution store with an externally obtained solution."""
        if self._memo is not None:
            self._memo[self._key(theta, s)] = sol

    def solve_ocp(self, theta, s):
        """Solve (or fetch the cached solution of) the OCP at (theta, s)."""
        key = self._key(theta, s)
        if key == self._cache_key:
            self.last_solution = self._cache_sol
            return self._cache_sol
        if self._memo is not None and key in self._memo:
            sol = self._memo[key]
            self._warm = sol
            self._warm_key = key
            self._cache_key = key
            self._cache_sol = sol
            self.last_solution = sol
            return sol
        zeta = self.ocp.pack_zeta(theta, s)
        sol = None
        if self._warm is not None:
            # same state -> reuse the trajectory as is (theta perturbation);
            # new state -> receding-horizon shift by one stage.  A capped
            # iteration budget keeps a poorly matched warm start from
            # crawling; the cold fallback below is cheaper than that.
            same_state = self._warm_key is not None and self._warm_key[1] == key[1]
            ws = self._warm if same_state else self.ocp.shift_warm(self._warm)
            warm_opts = replace(self.options,
                                max_iter=min(60, self.options.max_iter))
            sol = solve(self.ocp.nlp, zeta, warm_start=ws, options=warm_opts)
        if sol is None or not sol.ok:
            sol = solve(self.ocp.nlp, zeta, options=self.options)
        if not sol.ok:
            raise PolicyEvaluationFailed(
                f"OCP solve failed: {sol.status.value} ({sol.message})",
                theta=np.array(theta, dtype=float), state=np.array(s, dtype=float))
        self._warm = sol
        self._warm_key = key
        self._cache_key = key
        self._cache_sol = sol
        self.last_solution = sol
        if self._memo is not None:
            self._memo[key] = sol
        return sol

    def act(self, theta, s):
        sol = self.solve_ocp(theta, s)
        return sol.z[self.ocp.idx_u[0]].copy()

    def jacobian(self, theta, s):
        """d pi_theta(s) / d theta, shape (n_u, n_theta)."""
        sol = self.solve_ocp(theta, s)
        zeta = self.ocp.pack_zeta(theta, s)
        sens = solve_sensitivities(self.ocp.nlp, sol, zeta,
                                   tol_sc=self.tol_sc, tol_act=self.tol_act)
        return sens.dz[self.ocp.idx_u[0], :self.ocp.n_theta].copy()

    def state_jacobian(self, theta, s):
        """d pi_theta(s) / d s, shape (n_u, n_x)."""
        sol = self.solve_ocp(theta, s)
        zeta = self.ocp.pack_zeta(theta, s)
        sens = solve_sensitivities(self.ocp.nlp, sol, zeta,
                                   tol_sc=self.tol_sc, tol_act=self.tol_act)
        return sens.dz[self.ocp.idx_u[0], self.ocp.n_theta:].copy()

    def param_hessian(self, theta, s, h_rel=1e-4):
        """Second parameter derivatives of the policy, shape (n_u, p, p).

        Central finite differences of the first-order sensitivities with
        step h_j = h_rel * max(1, |theta_j|), symmetrized over the two
        parameter axes.  Each perturbed solve is warm started from the
        first-order prediction along the base point's sensitivities, which
        leaves it an O(h^2) correction away from its solution.
        """
        theta = np.asarray(theta, dtype=float)
        p = theta.size
        sol = self.solve_ocp(theta, s)
        zeta = self.ocp.pack_zeta(theta, s)
        sens = solve_sensitivities(self.ocp.nlp, sol, zeta,
                                   tol_sc=self.tol_sc, tol_act=self.tol_act)
        base = (self._warm, self._warm_key, self._cache_key,
                self._cache_sol, self.last_solution)
        key = self._key(theta, s)
        T = np.empty((self.n_a, p, p))

        def predicted(step, j):
            lam = np.clip(sol.lam + step * sens.dlam[:, j], 1e-10, None)
            return replace(sol, z=sol.z + step * sens.dz[:, j], lam=lam,
                           nu=sol.nu + step * sens.dnu[:, j])

        try:
            for j in range(p):
                h = h_rel * max(1.0, abs(theta[j]))
                e = np.zeros(p); e[j] = h
                self._warm, self._warm_key = predicted(h, j), key
                J_hi = self.jacobian(theta + e, s)
                self._warm, self._warm_key = predicted(-h, j), key
                J_lo = self.jacobian(theta - e, s)
                T[:, :, j] = (J_hi - J_lo) / (2.0 * h)
        finally:
            (self._warm, self._warm_key, self._cache_key,
             self._cache_sol, self.last_solution) = base
        return 0.5 * (T + np.transpose(T, (0, 2, 1)))
