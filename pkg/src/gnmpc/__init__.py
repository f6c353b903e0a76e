"""Second-order reinforcement learning of parameterized MPC policies.

The package provides:

* ``gnmpc.nlp`` -- a dense primal-dual interior-point solver for parametric
  NLPs with exact first/second derivatives (forward-mode hyper-dual numbers)
  and KKT-based parametric sensitivities,
* ``gnmpc.mpc`` -- multiple-shooting transcription of optimal control problems
  into parametric NLPs and the resulting differentiable MPC policy,
* ``gnmpc.rl`` -- rollout utilities, Monte Carlo value estimation and local
  quadratic Q-models,
* ``gnmpc.estimators`` -- sampled deterministic policy gradient and the two
  policy Hessian approximations (full approximate Newton and Gauss-Newton),
* ``gnmpc.optimizers`` -- first and second-order parameter updates with
  gradient momentum and a bias-corrected Hessian moving average,
* ``gnmpc.analytic`` -- the closed-form linear-quadratic example used to
  validate every estimator and optimizer against exact expressions,
* ``gnmpc.cstr`` -- the benchmark continuous stirred-tank reactor environment,
* ``gnmpc.harness`` -- config handling, the four-step training loop, metrics
  and the command line interface.
"""

__version__ = "0.1.0"
