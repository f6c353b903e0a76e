"""Small parametric NLPs with known solutions, plus an FD sensitivity oracle.

These problems exercise the solver and the KKT sensitivity path: active and
inactive inequalities, pure equality constraints, a log-barrier objective and
a nonconvex constrained valley.  The finite-difference oracle re-solves at
perturbed parameters with tightened tolerances and is the reference that
sensitivities are validated against (tests and the ``validate-sensitivities``
CLI subcommand share it).
"""

from __future__ import annotations

import numpy as np

from gnmpc.nlp.dual import log
from gnmpc.nlp.ipm import IpmOptions, solve
from gnmpc.nlp.problem import ParametricNLP


def make_scalar_qp():
    """min 1/2 z^2  s.t.  z >= zeta.  Active at zeta=1: z*=1, lam*=1."""
    nlp = ParametricNLP.from_callables(
        phi=lambda z, p: 0.5 * z[0] ** 2,
        g=lambda z, p: [p[0] - z[0]],
        n_z=1, n_p=1, n_g=1, name="scalar_qp")
    nlp.z_init = lambda zeta: np.array([zeta[0] + 1.0])
    return {"problem": nlp, "zeta": np.array([1.0]),
            "z_star": lambda zeta: np.array([zeta[0]]),
            "dz": lambda zeta: np.array([[1.0]])}


def make_equality_qp():
    """min (z1-zeta)^2 + (z2-2 zeta)^2  s.t.  z1+z2=1."""
    nlp = ParametricNLP.from_callables(
        phi=lambda z, p: (z[0] - p[0]) ** 2 + (z[1] - 2.0 * p[0]) ** 2,
        h=lambda z, p: [z[0] + z[1] - 1.0],
        n_z=2, n_p=1, n_h=1, name="equality_qp")
    return {"problem": nlp, "zeta": np.array([0.7]),
            "z_star": lambda zeta: np.array([(1 - zeta[0]) / 2,
                                             (1 + zeta[0]) / 2]),
            "dz": lambda zeta: np.array([[-0.5], [0.5]])}


def make_log_toy():
    """min zeta1*z - zeta2*log(z):  z* = zeta2/zeta1 (log keeps z > 0)."""
    nlp = ParametricNLP.from_callables(
        phi=lambda z, p: p[0] * z[0] - p[1] * log(z[0]),
        n_z=1, n_p=2, name="log_toy")
    nlp.z_init = lambda zeta: np.array([1.0])
    return {"problem": nlp, "zeta": np.array([2.0, 3.0]),
            "z_star": lambda zeta: np.array([zeta[1] / zeta[0]]),
            "dz": lambda zeta: np.array([[-zeta[1] / zeta[0] ** 2,
                                          1.0 / zeta[0]]])}


def make_box_qp():
    """min 1/2||z-zeta||^2  s.t.  z >= 0, sum(z) <= 1 (two active rows)."""
    def g(z, p):
        return [-z[0], -z[1], -z[2], z[0] + z[1] + z[2] - 1.0]

    nlp = ParametricNLP.from_callables(
        phi=lambda z, p: 0.5 * ((z[0] - p[0]) ** 2 + (z[1] - p[1]) ** 2
                                + (z[2] - p[2]) ** 2),
        g=g, n_z=3, n_p=3, n_g=4, name="box_qp")
    nlp.z_init = lambda zeta: np.full(3, 0.25)
    return {"problem": nlp, "zeta": np.array([0.8, 0.5, -0.2]),
            "z_star": lambda zeta: np.array([0.65, 0.35, 0.0]),
            "dz": None}


def make_constrained_rosenbrock():
    """min (1-z1)^2 + 10 (z2 - z1^2)^2  s.t.  z1 + z2 <= zeta (active)."""
    nlp = ParametricNLP.from_callables(
        phi=lambda z, p: (1.0 - z[0]) ** 2 + 10.0 * (z[1] - z[0] ** 2) ** 2,
        g=lambda z, p: [z[0] + z[1] - p[0]],
        n_z=2, n_p=1, n_g=1, name="constrained_rosenbrock")
    nlp.z_init = lambda zeta: np.array([0.5, 0.5])
    return {"problem": nlp, "zeta": np.array([1.5]),
            "z_star": None, "dz": None}


CORPUS = [make_scalar_qp, make_equality_qp, make_log_toy, make_box_qp,
          make_constrained_rosenbrock]


def fd_solution_sensitivities(problem, zeta, h=1e-5, tol=1e-10, warm=None):
    """Central finite differences of z*(zeta) from tightened re-solves."""
    opts = IpmOptions(tol=tol)
    zeta = np.asarray(zeta, dtype=float)
    base = warm or solve(problem, zeta, options=opts)
    if not base.ok:
        raise RuntimeError(f"base solve failed: {base.status}")
    cols = []
    for j in range(problem.n_p):
        e = np.zeros_like(zeta)
        e[j] = h
        hi = solve(problem, zeta + e, warm_start=base, options=opts)
        lo = solve(problem, zeta - e, warm_start=base, options=opts)
        if not (hi.ok and lo.ok):
            raise RuntimeError("perturbed solve failed")
        cols.append((hi.z - lo.z) / (2.0 * h))
    return np.stack(cols, axis=1), base
