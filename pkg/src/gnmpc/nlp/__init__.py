"""Parametric NLP modeling, interior-point solving and KKT sensitivities."""

from gnmpc.nlp.dual import Dual2, seed_variables, exp, log, sqrt
from gnmpc.nlp.problem import (
    LinearTerms,
    NonlinearBlock,
    ParametricNLP,
)
from gnmpc.nlp.ipm import IpmOptions, PrimalDualSolution, SolveStatus, solve
from gnmpc.nlp.sensitivity import (
    SensitivityResult,
    kkt_matrix,
    kkt_residual,
    solve_sensitivities,
)

__all__ = [
    "Dual2",
    "seed_variables",
    "exp",
    "log",
    "sqrt",
    "LinearTerms",
    "NonlinearBlock",
    "ParametricNLP",
    "IpmOptions",
    "PrimalDualSolution",
    "SolveStatus",
    "solve",
    "SensitivityResult",
    "kkt_matrix",
    "kkt_residual",
    "solve_sensitivities",
]
