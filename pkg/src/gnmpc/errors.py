"""Exception types shared across the package."""


class GnmpcError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatch(GnmpcError):
    """Inputs have inconsistent shapes."""


class OcpSpecError(GnmpcError):
    """An OCP specification is internally inconsistent."""


class SingularKKT(GnmpcError):
    """The KKT matrix is singular or numerically unusable."""


class WeakComplementarity(GnmpcError):
    """Strict complementarity margin below tolerance; sensitivities undefined."""


class PolicyEvaluationFailed(GnmpcError):
    """The policy NLP did not reach an optimal solution.

    Carries the offending (theta, state) pair for diagnosis.
    """

    def __init__(self, message, theta=None, state=None):
        super().__init__(message)
        self.theta = theta
        self.state = state


class RankDeficientFit(GnmpcError):
    """Regression design matrix is rank deficient."""


class EmptySampleSet(GnmpcError):
    """An estimator was called with no usable samples."""


class EstimatorSampleLoss(GnmpcError):
    """Too many samples were dropped during estimation (> 10%)."""


class NonFiniteGradient(GnmpcError):
    """A gradient or Hessian estimate contains NaN or Inf."""


class SingularHessian(GnmpcError):
    """Hessian (after projection) is numerically singular."""


class DegenerateDiscount(GnmpcError):
    """Discount factor outside [0, 1)."""


class DegeneratePoint(GnmpcError):
    """Closed-form expression evaluated at a pole or outside its domain."""


class DivergedIterate(GnmpcError):
    """An exact-iteration run left the region where expressions are valid."""


class NonFiniteRhs(GnmpcError):
    """An ODE right-hand side evaluated to NaN/Inf."""


class NonFiniteState(GnmpcError):
    """Environment state or reward became NaN/Inf."""


class NonPhysicalParameter(GnmpcError):
    """Environment parameters violate physical validity."""


class ConfigError(GnmpcError):
    """Experiment configuration is malformed, has unknown keys or bad types."""


class AbortedUnsolvable(GnmpcError):
    """Training aborted: the policy became unsolvable for all samples."""
