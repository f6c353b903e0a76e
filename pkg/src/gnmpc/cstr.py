"""Continuously stirred tank reactor environment with uncertain kinetics.

Van de Vusse scheme A -> B -> C, 2A -> D in a jacketed reactor: educt A
enters with the feed, the value product is B, and the two side reactions
release heat that the cooling jacket has to remove.  Manipulated variables
are the dilution rate F and the jacket heat flow Q.  The RL state augments
the four physical states with the previously applied inputs so that input
moves can be penalized; rewards are non-positive and vanish exactly at the
temperature references with unchanged inputs inside the state box.

The same right-hand side serves the simulator (floats) and the OCP
transcription (hyper-dual components), so the MPC model and the plant
differ only through the kinetic multipliers mu_alpha, mu_beta.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from gnmpc.errors import NonFiniteRhs, NonFiniteState, NonPhysicalParameter
from gnmpc.mpc import OcpSpec
from gnmpc.nlp.dual import Dual2, exp

# state (C_A, C_B, T_R, T_K, F_prev, Q_prev) and action (F, Q) boxes
S_LB = np.array([0.1, 0.1, 80.0, 80.0, 5.0, -8.5])
S_UB = np.array([2.0, 2.0, 140.0, 140.0, 40.0, 0.0])
A_LB = np.array([5.0, -8.5])
A_UB = np.array([40.0, 0.0])

T_R_REF = 126.0
T_K_REF = 120.0


@dataclass(frozen=True)
class CstrParams:
    """Nominal reactor constants of the Klatt-Engell benchmark.

    Concentrations are in mol/L, temperatures in Celsius, times in hours,
    energies in kJ.  ``heat_scale`` converts the action-scale heat flow
    (MJ/h, the units of the Q box above) into the kJ/h of the jacket energy
    balance.  ``mu_alpha`` scales the activation energy of the 2A -> D
    reaction, ``mu_beta`` the pre-exponential factor of A -> B.
    """

    k0_ab: float = 1.287e12     # 1/h
    k0_bc: float = 1.287e12     # 1/h
    k0_ad: float = 9.043e9      # L/(mol h)
    ea_ab: float = 9758.3       # K
    ea_bc: float = 9758.3       # K
    ea_ad: float = 8560.0       # K
    h_ab: float = 4.2           # kJ/mol
    h_bc: float = -11.0         # kJ/mol
    h_ad: float = -41.85        # kJ/mol
    rho: float = 0.9342         # kg/L
    cp: float = 3.01            # kJ/(kg K)
    cp_k: float = 2.0           # kJ/(kg K)
    a_r: float = 0.215          # m^2
    v_r: float = 10.01          # L
    m_k: float = 5.0            # kg
    t_in: float = 130.0         # degC
    k_w: float = 4032.0         # kJ/(h m^2 K)
    c_a_in: float = 5.1         # mol/L
    heat_scale: float = 1e3     # MJ/h -> kJ/h in the jacket balance
    mu_alpha: float = 1.0
    mu_beta: float = 1.0

    def __post_init__(self):
        # enthalpies carry reaction signs; everything else must be positive.
        # Dual-number multipliers (used inside the OCP) skip the check.
        for name in ("k0_ab", "k0_bc", "k0_ad", "ea_ab", "ea_bc", "ea_ad",
                     "rho", "cp", "cp_k", "a_r", "v_r", "m_k", "t_in",
                     "k_w", "c_a_in", "heat_scale", "mu_alpha", "mu_beta"):
            v = getattr(self, name)
            if isinstance(v, (int, float)) and not v > 0.0:
                raise NonPhysicalParameter(f"{name} must be strictly positive")


def _values(v):
    return v.val if isinstance(v, Dual2) else v


def ode_rhs(x, u, params):
    """Time derivatives of the physical states (C_A, C_B, T_R, T_K).

    Components may be floats, arrays, or hyper-dual numbers; the returned
    list matches the operand flavor.  Arrhenius factors use the absolute
    temperature T_R + 273.15.
    """
    c_a, c_b, t_r, t_k = x[0], x[1], x[2], x[3]
    f, q = u[0], u[1]
    t_abs = t_r + 273.15
    k1 = params.mu_beta * params.k0_ab * exp(-params.ea_ab / t_abs)
    k2 = params.k0_bc * exp(-params.ea_bc / t_abs)
    k3 = params.k0_ad * exp(-params.mu_alpha * params.ea_ad / t_abs)
    rho_cp = params.rho * params.cp
    jacket = params.k_w * params.a_r
    d_ca = f * (params.c_a_in - c_a) - k1 * c_a - k3 * c_a * c_a
    d_cb = -f * c_b + k1 * c_a - k2 * c_b
    d_tr = ((k1 * c_a * params.h_ab + k2 * c_b * params.h_bc
             + k3 * c_a * c_a * params.h_ad) / (-rho_cp)
            + f * (params.t_in - t_r)
            + jacket * (t_k - t_r) / (rho_cp * params.v_r))
    d_tk = (q * params.heat_scale + jacket * (t_r - t_k)) / (params.m_k * params.cp_k)
    out = [d_ca, d_cb, d_tr, d_tk]
    if not np.all(np.isfinite([_values(v) for v in out])):
        raise NonFiniteRhs("reactor right-hand side is not finite")
    return out


def rk4_step(x, u, params, dt):
    """One classical Runge-Kutta step of the four physical states."""
    k1 = ode_rhs(x, u, params)
    x2 = [x[j] + (0.5 * dt) * k1[j] for j in range(4)]
    k2 = ode_rhs(x2, u, params)
    x3 = [x[j] + (0.5 * dt) * k2[j] for j in range(4)]
    k3 = ode_rhs(x3, u, params)
    x4 = [x[j] + dt * k3[j] for j in range(4)]
    k4 = ode_rhs(x4, u, params)
    return [x[j] + (dt / 6.0) * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
            for j in range(4)]


def reward(s, a):
    """Tracking + input-move + constraint reward, <= 0 everywhere.

    Input moves are normalized by the action ranges; the constraint part
    takes a single scalar max over every bound gap of the state box.
    """
    s = np.asarray(s, dtype=float)
    a = np.asarray(a, dtype=float)
    with np.errstate(over="ignore"):
        r_ref = -1e-2 * ((s[2] - T_R_REF) ** 2 + (s[3] - T_K_REF) ** 2)
        d_f = (s[4] - a[0]) / (A_UB[0] - A_LB[0])
        d_q = (s[5] - a[1]) / (A_UB[1] - A_LB[1])
        r_move = -1e-2 * (d_f * d_f + d_q * d_q)
        gap = max(0.0, float(np.max(S_LB - s)), float(np.max(s - S_UB)))
        return float(r_ref + r_move - 100.0 * gap)


def step(s, a, params, dt, rng=None):
    """Advance the six-component RL state by one sampling interval.

    Returns ``(s_next, reward)``.  The transition is deterministic given the
    scenario parameters (``rng`` is accepted for interface uniformity); the
    reward is evaluated at the pre-transition state and the applied action,
    and the applied inputs become the next previous-input components.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    s = np.asarray(s, dtype=float)
    a = np.asarray(a, dtype=float)
    r = reward(s, a)
    if not np.isfinite(r):
        raise NonFiniteState("reward is not finite")
    try:
        phys = rk4_step([s[0], s[1], s[2], s[3]], [a[0], a[1]], params, dt)
    except NonFiniteRhs as err:
        raise NonFiniteState("reactor state left the representable range") from err
    s_next = np.empty(6)
    s_next[:4] = phys
    s_next[4:] = a
    if not np.all(np.isfinite(s_next)):
        raise NonFiniteState("reactor state left the representable range")
    return s_next, r


def sample_episode_setup(rng):
    """Draw (s0, mu_alpha, mu_beta) for one episode.

    The initial state is componentwise uniform over the state box and the
    kinetic multipliers are uniform on [0.95, 1.05]; the realizations stay
    hidden from the agent.
    """
    s0 = rng.uniform(S_LB, S_UB)
    mu_alpha = float(rng.uniform(0.95, 1.05))
    mu_beta = float(rng.uniform(0.95, 1.05))
    return s0, mu_alpha, mu_beta


def agent_param_map(theta_alpha, theta_beta):
    """Map policy parameters to the MPC model's kinetic multipliers.

    mu_alpha = (1 + theta_alpha) * 0.95 and mu_beta = (1 + theta_beta) * 1,
    so theta = 0 starts the nominal model at (0.95, 1.0).  Accepts floats or
    hyper-dual components.
    """
    mu_a = (1.0 + theta_alpha) * 0.95
    mu_b = (1.0 + theta_beta) * 1.0
    for name, mu in (("mu_alpha", mu_a), ("mu_beta", mu_b)):
        v = mu.val if isinstance(mu, Dual2) else mu
        if not np.all(np.asarray(v) > 0.0):
            raise NonPhysicalParameter(f"{name} would be non-positive")
    return mu_a, mu_b


class CstrEnv:
    """Episodic reactor environment over scenarios (s0, mu_alpha, mu_beta)."""

    n_x = 6
    n_a = 2

    def __init__(self, params: CstrParams | None = None, dt=0.005, gamma=0.9):
        self.params = params if params is not None else CstrParams()
        self.dt = float(dt)
        self.gamma = float(gamma)
        self.a_lb = A_LB.copy()
        self.a_ub = A_UB.copy()

    def sample_scenario(self, rng):
        s0, mu_alpha, mu_beta = sample_episode_setup(rng)
        return {"s0": s0, "mu_alpha": mu_alpha, "mu_beta": mu_beta}

    def scenario_params(self, scenario):
        return replace(self.params, mu_alpha=scenario["mu_alpha"],
                       mu_beta=scenario["mu_beta"])

    def reset(self, scenario):
        return np.asarray(scenario["s0"], dtype=float).copy()

    def transition(self, s, a, scenario, rng=None):
        s_next, _ = step(s, a, self.scenario_params(scenario), self.dt, rng)
        return s_next

    def reward(self, s, a, s_next=None):
        return reward(s, a)


def cstr_ocp(horizon=20, dt=0.005, params: CstrParams | None = None,
             slack_weight=100.0, terminal_slack_weight=100.0) -> OcpSpec:
    """OCP family for the nominal-model MPC agent.

    theta = (theta_alpha, theta_beta) reparameterizes the uncertain kinetic
    multipliers through :func:`agent_param_map`.  The stage cost is the
    negative reward; its constraint part is delegated to the transcription's
    soft state boxes, whose linear penalty weight mirrors the reward
    coefficient 100.  Previous inputs ride along as model states so the
    move penalty is exact, including for the first move relative to s.
    """
    base = params if params is not None else CstrParams()
    f_rng = A_UB[0] - A_LB[0]
    q_rng = A_UB[1] - A_LB[1]

    def dynamics(x, u, th):
        mu_a, mu_b = agent_param_map(th[0], th[1])
        p = replace(base, mu_alpha=mu_a, mu_beta=mu_b)
        phys = rk4_step([x[0], x[1], x[2], x[3]], [u[0], u[1]], p, dt)
        return [phys[0], phys[1], phys[2], phys[3], u[0], u[1]]

    def stage_cost(x, u, th):
        d_tr = x[2] - T_R_REF
        d_tk = x[3] - T_K_REF
        d_f = (x[4] - u[0]) / f_rng
        d_q = (x[5] - u[1]) / q_rng
        return 1e-2 * (d_tr * d_tr + d_tk * d_tk + d_f * d_f + d_q * d_q)

    return OcpSpec(n_x=6, n_u=2, n_theta=2, horizon=horizon,
                   dynamics=dynamics, stage_cost=stage_cost,
                   u_lb=A_LB.copy(), u_ub=A_UB.copy(),
                   x_lb=S_LB.copy(), x_ub=S_UB.copy(),
                   slack_weight=slack_weight,
                   terminal_slack_weight=terminal_slack_weight,
                   u_guess=lambda th, s: s[4:6])
