"""Continuous-time plant models, fixed-step RK4 integration under a
zero-order hold, and LTI steady-state / Lyapunov analysis.

All three study plants live here as builders: the second-order SISO
set-point plant, the three-producer supply chain, and a reduced-order
thermal network surrogate of the five-room office building.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ge import GameProblem, HingePenalty, KktNlpProblem
from .operators import Box

__all__ = [
    "PlantModel",
    "DisturbanceSignal",
    "constant_disturbance",
    "ramp_disturbance",
    "piecewise_constant_disturbance",
    "surge_disturbance",
    "table_disturbance",
    "IntegrationResult",
    "integrate_hold",
    "LyapunovData",
    "NonHurwitz",
    "lti_lyapunov",
    "build_siso_plant",
    "SupplyChainParams",
    "build_supply_chain",
    "BuildingParams",
    "build_building",
]

BLOWUP_NORM = 1e9


@dataclass(frozen=True)
class PlantModel:
    """Stable plant dx/dt = f(x,u,w), y = g(x,w) with steady-state maps
    p (state) and h (output) and the input-output sensitivity grad_u h."""

    dim_x: int
    dim_u: int
    dim_y: int
    dim_w: int
    f: callable
    g: callable
    p: callable
    h: callable
    h_sensitivity: callable
    u_set: Box = None
    lti_A: np.ndarray = None        # state matrix when the plant is LTI
    name: str = "plant"


# ---------------------------------------------------------------------------
# Disturbance signals


@dataclass(frozen=True)
class DisturbanceSignal:
    """Time signal w(t) with an essential-supremum bound on its derivative.

    ``rate_bound(t0, t1)`` returns sup |dw/dt| over the interval; intervals
    containing a jump of a piecewise-constant signal report inf (the jump
    is a one-interval exception in the disturbance-rate bookkeeping).
    """

    kind: str
    value: callable = field(repr=False)
    derivative_bound: float = 0.0
    jump_times: tuple = ()

    def __call__(self, t):
        return np.atleast_1d(np.asarray(self.value(t), dtype=float))

    def rate_bound(self, t0, t1):
        for tj in self.jump_times:
            if t0 < tj <= t1:
                return math.inf
        return self.derivative_bound


def constant_disturbance(value) -> DisturbanceSignal:
    v = np.atleast_1d(np.asarray(value, dtype=float)).copy()
    return DisturbanceSignal(kind="constant", value=lambda t: v, derivative_bound=0.0)


def ramp_disturbance(base, slope) -> DisturbanceSignal:
    b = np.atleast_1d(np.asarray(base, dtype=float))
    s = np.atleast_1d(np.asarray(slope, dtype=float))
    return DisturbanceSignal(
        kind="ramp",
        value=lambda t: b + s * t,
        derivative_bound=float(np.linalg.norm(s)),
    )


def piecewise_constant_disturbance(times, values) -> DisturbanceSignal:
    times = np.asarray(times, dtype=float)
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if times.size != values.shape[0]:
        raise ValueError("times/values length mismatch")
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")

    def value(t):
        idx = int(np.searchsorted(times, t, side="right") - 1)
        return values[max(idx, 0)]

    return DisturbanceSignal(
        kind="piecewise_constant",
        value=value,
        derivative_bound=0.0,
        jump_times=tuple(times[1:]),
    )


def surge_disturbance(base, factor, t_surge) -> DisturbanceSignal:
    b = np.atleast_1d(np.asarray(base, dtype=float))
    return DisturbanceSignal(
        kind="surge",
        value=lambda t: b * factor if t >= t_surge else b,
        derivative_bound=0.0,
        jump_times=(float(t_surge),),
    )


def table_disturbance(times, values) -> DisturbanceSignal:
    """Sampled table with linear interpolation; the derivative bound is the
    supremum of the finite-difference slopes."""
    times = np.asarray(times, dtype=float)
    values = np.atleast_2d(np.asarray(values, dtype=float))
    slopes = np.diff(values, axis=0) / np.diff(times)[:, None]
    bound = float(np.max(np.linalg.norm(slopes, axis=1))) if slopes.size else 0.0

    def value(t):
        out = np.empty(values.shape[1])
        for j in range(values.shape[1]):
            out[j] = np.interp(t, times, values[:, j])
        return out

    return DisturbanceSignal(kind="table", value=value, derivative_bound=bound)


# ---------------------------------------------------------------------------
# Zero-order-hold integration


@dataclass(frozen=True)
class IntegrationResult:
    x_end: np.ndarray
    ts: np.ndarray
    xs: np.ndarray                  # substep states, shape (len(ts), dim_x)
    diverged: bool = False
    blowup_time: float = None


def integrate_hold(plant: PlantModel, x0, u_held, w: DisturbanceSignal,
                   t0: float, tau: float, substeps: int) -> IntegrationResult:
    """Classical RK4 over [t0, t0+tau] with the input held constant and the
    disturbance sampled continuously.  Deterministic; fixed substep tau/substeps.
    """
    if substeps < 1:
        raise ValueError("substeps >= 1 required")
    if tau <= 0:
        raise ValueError("tau > 0 required")
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    u = np.atleast_1d(np.asarray(u_held, dtype=float))
    dt = tau / substeps
    ts = np.empty(substeps + 1)
    xs = np.empty((substeps + 1, x.size))
    ts[0], xs[0] = t0, x
    f = plant.f
    for i in range(substeps):
        t = t0 + i * dt
        k1 = f(x, u, w(t))
        k2 = f(x + 0.5 * dt * k1, u, w(t + 0.5 * dt))
        k3 = f(x + 0.5 * dt * k2, u, w(t + 0.5 * dt))
        k4 = f(x + dt * k3, u, w(t + dt))
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        ts[i + 1] = t + dt
        xs[i + 1] = x
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > BLOWUP_NORM:
            return IntegrationResult(
                x_end=x, ts=ts[: i + 2], xs=xs[: i + 2],
                diverged=True, blowup_time=float(t + dt),
            )
    return IntegrationResult(x_end=x, ts=ts, xs=xs)


# ---------------------------------------------------------------------------
# LTI Lyapunov machinery


class NonHurwitz(Exception):
    pass


@dataclass(frozen=True)
class LyapunovData:
    P: np.ndarray
    alpha3: float                   # lambda_min(P)
    alpha4: float                   # lambda_max(P)
    alpha5: float                   # lambda_min(P^{-1}) = 1/lambda_max(P)
    residual: float


def lti_lyapunov(A, Q=None) -> LyapunovData:
    """Solve A'P + PA + Q = 0 (Q = I by default) as a linear system in the
    symmetric entries of P, for the quadratic certificate V = 0.5|x - x_ss|_P^2.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    if Q is None:
        Q = np.eye(n)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    eig = np.linalg.eigvals(A)
    if np.any(eig.real >= 0):
        raise NonHurwitz(f"A has eigenvalue with Re >= 0: {eig}")

    # unknowns: vech(P), equations: vech(A'P + PA + Q) = 0
    idx = [(i, j) for i in range(n) for j in range(i, n)]
    k = len(idx)
    Msys = np.zeros((k, k))
    rhs = np.zeros(k)
    for col, (p, q) in enumerate(idx):
        E = np.zeros((n, n))
        E[p, q] = E[q, p] = 1.0
        L = A.T @ E + E @ A
        for row, (i, j) in enumerate(idx):
            Msys[row, col] = L[i, j]
    for row, (i, j) in enumerate(idx):
        rhs[row] = -Q[i, j]
    sol = np.linalg.solve(Msys, rhs)
    P = np.zeros((n, n))
    for col, (i, j) in enumerate(idx):
        P[i, j] = P[j, i] = sol[col]
    resid = float(np.abs(A.T @ P + P @ A + Q).max())
    ev = np.linalg.eigvalsh(P)
    return LyapunovData(
        P=P,
        alpha3=float(ev[0]),
        alpha4=float(ev[-1]),
        alpha5=float(1.0 / ev[-1]),
        residual=resid,
    )


# ---------------------------------------------------------------------------
# SISO set-point plant (second-order, unity steady-state gain)


def build_siso_plant() -> PlantModel:
    """xdd + 0.5 xd + x = u + w, y = x; steady-state map h(u,w) = u + w."""
    A = np.array([[0.0, 1.0], [-1.0, -0.5]])
    B = np.array([0.0, 1.0])

    def f(x, u, w):
        return A @ x + B * (u[0] + w[0])

    def g(x, w):
        return np.array([x[0]])

    def p(u, w):
        return np.array([u[0] + w[0], 0.0])

    def h(u, w):
        return np.array([u[0] + w[0]])

    def h_sens(u, w):
        return np.array([[1.0]])

    return PlantModel(
        dim_x=2, dim_u=1, dim_y=1, dim_w=1,
        f=f, g=g, p=p, h=h, h_sensitivity=h_sens,
        u_set=Box(lower=[-10.0], upper=[10.0]),
        lti_A=A, name="siso",
    )


# ---------------------------------------------------------------------------
# Competitive supply chain (3 producers, single-product market)


@dataclass(frozen=True)
class SupplyChainParams:
    """Randomly drawn model/game constants.  The uniform ranges are
    implementation defaults (documented, seeded), not literature values."""

    seed: int
    n: int
    tau_p: np.ndarray               # production time constants [days]
    tau_m: float                    # market time constant [days]
    k_gain: np.ndarray              # inventory control gains
    beta: np.ndarray                # own-price demand sensitivity
    beta_cross: np.ndarray          # cross-price sensitivities (zero diagonal)
    cost: np.ndarray                # unit production prices c_i
    d_base: np.ndarray              # baseline demands
    s_bar: np.ndarray               # inventory setpoints
    sigma_min: float
    sigma_cap_avg: float            # average-price cap (tuned, see builder)
    surge_factor: float
    t_surge: float

    @property
    def demand_matrix(self) -> np.ndarray:
        """dbar(sigma, dw) = dw - Bm sigma with Bm = diag(beta) - beta_cross."""
        return np.diag(self.beta) - self.beta_cross

    @property
    def pseudo_gradient_matrix(self) -> np.ndarray:
        """Condensed pseudo-gradient F(sigma) = M sigma + m0."""
        return np.diag(self.beta) + self.demand_matrix

    def pseudo_gradient_offset(self, dw) -> np.ndarray:
        return -np.asarray(dw, dtype=float) - self.beta * self.cost


def _draw_supply_chain(seed):
    # ranges are implementation defaults: gentle price sensitivities keep the
    # admissible FBS gains large enough that the coupling multiplier settles
    # within the yearly horizon at weekly sampling
    rng = np.random.default_rng(seed)
    n = 3
    tau_p = rng.uniform(2.0, 6.0, n)
    tau_m = float(rng.uniform(2.0, 4.0))
    k_gain = rng.uniform(0.2, 1.0, n)
    beta = rng.uniform(0.15, 0.35, n)
    beta_cross = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                beta_cross[i, j] = rng.uniform(0.0, 0.3 * beta[i])
    cost = rng.uniform(1.0, 3.0, n)
    d_base = rng.uniform(5.0, 10.0, n)
    return n, tau_p, tau_m, k_gain, beta, beta_cross, cost, d_base


def build_supply_chain(seed: int = 7, surge_factor: float = 3.0,
                       t_surge: float = 120.0):
    """Three-producer pricing game on a shared market.

    Returns (PlantModel, GameProblem, SupplyChainParams).  Parameter draws
    violating the strong-monotonicity condition on the pseudo-gradient are
    regenerated with the next seed (with diagnostics in the exception if
    that keeps failing).
    """
    attempts = []
    for trial in range(32):
        n, tau_p, tau_m, k_gain, beta, beta_cross, cost, d_base = _draw_supply_chain(
            seed + trial
        )
        M = np.diag(beta) + np.diag(beta) - beta_cross
        mu = float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])
        if mu > 1e-6:
            break
        attempts.append((seed + trial, mu))
    else:
        raise RuntimeError(f"no strongly monotone draw found: {attempts}")

    ell_tilde = float(np.linalg.norm(M, 2))
    mu_tilde = mu

    # cap tuned so the average-price constraint is inactive before the demand
    # surge and active after it (both equilibria are computable at build time)
    sig_pre = np.linalg.solve(M, d_base + beta * cost)
    sig_post = np.linalg.solve(M, surge_factor * d_base + beta * cost)
    cap = float(np.mean(sig_pre) + 0.4 * (np.mean(sig_post) - np.mean(sig_pre)))

    params = SupplyChainParams(
        seed=seed + trial, n=n, tau_p=tau_p, tau_m=tau_m, k_gain=k_gain,
        beta=beta, beta_cross=beta_cross, cost=cost, d_base=d_base,
        s_bar=np.full(n, 50.0), sigma_min=0.0, sigma_cap_avg=cap,
        surge_factor=surge_factor, t_surge=t_surge,
    )

    Bm = params.demand_matrix

    def dbar(sigma, dw):
        return np.asarray(dw, float) - Bm @ np.asarray(sigma, float)

    # state per producer: (s_i - sbar_i, l_i, d_i); stacked in agent order
    def f(x, u, w):
        dx = np.empty(3 * n)
        db = dbar(u, w)
        for i in range(n):
            e_s, l, d = x[3 * i], x[3 * i + 1], x[3 * i + 2]
            dx[3 * i] = l - d
            dx[3 * i + 1] = -(l + k_gain[i] * e_s - d) / tau_p[i]
            dx[3 * i + 2] = -(d - db[i]) / tau_m
        return dx

    def g(x, w):
        y = np.empty(2 * n)
        for i in range(n):
            y[2 * i] = x[3 * i + 1]      # production rate l_i
            y[2 * i + 1] = x[3 * i + 2]  # local demand d_i
        return y

    def p(u, w):
        db = dbar(u, w)
        x = np.empty(3 * n)
        for i in range(n):
            x[3 * i] = 0.0
            x[3 * i + 1] = db[i]
            x[3 * i + 2] = db[i]
        return x

    def h(u, w):
        db = dbar(u, w)
        y = np.empty(2 * n)
        for i in range(n):
            y[2 * i] = db[i]
            y[2 * i + 1] = db[i]
        return y

    def h_sens(u, w):
        Hm = np.zeros((2 * n, n))
        for i in range(n):
            Hm[2 * i] = -Bm[i]
            Hm[2 * i + 1] = -Bm[i]
        return Hm

    lti_A = np.zeros((3 * n, 3 * n))
    for i in range(n):
        blk = np.array(
            [
                [0.0, 1.0, -1.0],
                [-k_gain[i] / tau_p[i], -1.0 / tau_p[i], 1.0 / tau_p[i]],
                [0.0, 0.0, -1.0 / tau_m],
            ]
        )
        lti_A[3 * i : 3 * i + 3, 3 * i : 3 * i + 3] = blk

    plant = PlantModel(
        dim_x=3 * n, dim_u=n, dim_y=2 * n, dim_w=n,
        f=f, g=g, p=p, h=h, h_sensitivity=h_sens,
        u_set=Box(lower=np.zeros(n), upper=np.full(n, np.inf)),
        lti_A=lti_A, name="supply_chain",
    )

    def make_partial(i):
        def F_i(u, s):
            d_i = np.asarray(s, float)[2 * i + 1]
            return np.array([-d_i - beta[i] * (cost[i] - u[i])])

        return F_i

    game = GameProblem(
        n_agents=n,
        local_dims=(1,) * n,
        partial_gradients=tuple(make_partial(i) for i in range(n)),
        local_sets=tuple(
            Box(lower=[params.sigma_min], upper=[np.inf]) for _ in range(n)
        ),
        coupling_A=np.full((1, n), 1.0 / n),
        coupling_b=np.array([cap]),
        mu_tilde=mu_tilde,
        ell_tilde=ell_tilde,
        ell=1.0,
    )
    return plant, game, params


# ---------------------------------------------------------------------------
# Five-room building surrogate (6-state RC network, bilinear AHU)


@dataclass(frozen=True)
class BuildingParams:
    n_rooms: int = 5
    c_room: float = 2.0e6           # room heat capacity [J/K]
    c_env: float = 1.0e7            # envelope heat capacity [J/K]
    k_room_env: float = 150.0       # room-envelope conductance [W/K]
    k_room_room: float = 80.0       # adjacent-room conductance [W/K]
    k_env_amb: float = 300.0        # envelope-ambient conductance [W/K]
    k_env_gnd: float = 100.0        # envelope-ground conductance [W/K]
    sol_env: float = 0.7            # solar fraction on the envelope
    sol_room: float = 0.06          # solar fraction per room
    cp_air: float = 1005.0          # [J/(kg K)]
    room_area: float = 20.0         # radiator area per room [m^2]
    occupant_gain: float = 100.0    # [W/person]
    t_min: float = 21.0
    t_max: float = 25.0
    # the controller tightens the comfort band by this margin so that model
    # mismatch (the unmeasured envelope state) does not push the rooms out
    # of the true band while the optimizer sits on the penalty kink
    comfort_backoff: float = 0.5
    epsilon: float = 1e-5           # quadratic regularizer weight
    eta: float = 5e4                # comfort-violation penalty weight
    prices: np.ndarray = field(
        default_factory=lambda: np.array([10.0, 0.10, 0.12, 2.0, 2.0, 2.0, 2.0, 2.0])
    )
    # input box: air flow [kg/s], AHU heat [W], AHU cool [W], radiators [W/m^2]
    u_lower: np.ndarray = field(
        default_factory=lambda: np.array([0.0, 100.0, 100.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    )
    u_upper: np.ndarray = field(
        default_factory=lambda: np.array([1.0, 1000.0, 1000.0, 25.0, 25.0, 25.0, 25.0, 25.0])
    )
    w_nominal: np.ndarray = field(
        default_factory=lambda: np.array([10.0, 12.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    )


def build_building(params: BuildingParams = None):
    """Reduced-order surrogate of the office building: 5 room nodes plus one
    envelope node, with a bilinear air-handling term (control authority of
    the AHU depends on the ambient and room temperatures).

    Inputs  u = (mdot, P_heat, P_cool, rad_1..rad_5)
    Disturb w = (T_amb, T_gnd, q_sol, occ_1..occ_5)
    Outputs y = (T_room_1..5, T_amb, T_gnd)

    Returns (PlantModel, KktNlpProblem, BuildingParams).
    """
    bp = params or BuildingParams()
    nr = bp.n_rooms
    nx, nu, ny, nw = nr + 1, 3 + nr, nr + 2, 3 + nr
    adj = [(i, i + 1) for i in range(nr - 1)]

    def system_matrices(u, w):
        """x-linear form:  C dx/dt = M x + n  (M, n include the held input)."""
        mdot, ph, pc = u[0], u[1], u[2]
        rad = u[3:]
        ta, tg, qsol = w[0], w[1], w[2]
        occ = w[3:]
        M = np.zeros((nx, nx))
        nvec = np.zeros(nx)
        vent = mdot * bp.cp_air / nr
        for i in range(nr):
            M[i, i] -= bp.k_room_env + vent
            M[i, nr] += bp.k_room_env
            nvec[i] += (
                vent * ta
                + (ph - pc) / nr
                + rad[i] * bp.room_area
                + bp.sol_room * qsol
                + occ[i] * bp.occupant_gain
            )
        for (i, j) in adj:
            M[i, i] -= bp.k_room_room
            M[i, j] += bp.k_room_room
            M[j, j] -= bp.k_room_room
            M[j, i] += bp.k_room_room
        M[nr, nr] -= nr * bp.k_room_env + bp.k_env_amb + bp.k_env_gnd
        for i in range(nr):
            M[nr, i] += bp.k_room_env
        nvec[nr] += bp.k_env_amb * ta + bp.k_env_gnd * tg + bp.sol_env * qsol
        caps = np.concatenate([np.full(nr, bp.c_room), [bp.c_env]])
        return M / caps[:, None], nvec / caps

    def f(x, u, w):
        M, nvec = system_matrices(u, w)
        return M @ x + nvec

    def g(x, w):
        return np.concatenate([x[:nr], [w[0], w[1]]])

    def p(u, w):
        M, nvec = system_matrices(u, w)
        return np.linalg.solve(-M, nvec)

    def h(u, w):
        return g(p(u, w), w)

    def h_sens(u, w):
        """Central finite differences of the (exactly solved) steady state."""
        H = np.zeros((ny, nu))
        for k in range(nu):
            step = max(1e-5, 1e-6 * abs(u[k]))
            up, um = np.array(u, float), np.array(u, float)
            up[k] += step
            um[k] -= step
            H[:, k] = (h(up, w) - h(um, w)) / (2.0 * step)
        return H

    u_set = Box(lower=bp.u_lower, upper=bp.u_upper)
    plant = PlantModel(
        dim_x=nx, dim_u=nu, dim_y=ny, dim_w=nw,
        f=f, g=g, p=p, h=h, h_sensitivity=h_sens,
        u_set=u_set, name="building",
    )

    eps, c = bp.epsilon, bp.prices

    def phi(xi, u):
        return 0.5 * eps * (float(xi @ xi) + float(u @ u)) + float(c @ u)

    def grad_phi(xi, u):
        return eps * np.asarray(xi, float), eps * np.asarray(u, float) + c

    def hess_phi(xi, u):
        return eps * np.eye(ny), np.zeros((nu, ny)), eps * np.eye(nu)

    w_nom = bp.w_nominal

    nlp = KktNlpProblem(
        dim_xi=ny, dim_u=nu,
        phi=phi, grad_phi=grad_phi, hess_phi=hess_phi,
        u_set=u_set,
        h_sensitivity=lambda u, w=None: h_sens(u, w if w is not None else w_nom),
        varphi=HingePenalty(
            weight=bp.eta,
            lower=np.full(nr, bp.t_min + bp.comfort_backoff),
            upper=np.full(nr, bp.t_max - bp.comfort_backoff),
            indices=tuple(range(nr)),
        ),
    )
    return plant, nlp, bp
