"""Packaged closed-loop case studies with machine-checkable expected outcomes.

Each builder returns a :class:`Scenario` bundling a plant, a controller, a
disturbance, loop settings, optional stability certificate, and a list of
named pass/fail checks evaluated on the finished run.  Scenarios can also be
described by a small TOML config (``load_config`` / ``scenario_from_config``
/ ``dumps_config``) so runs are reproducible from a single file.
"""

from __future__ import annotations

import dataclasses
import inspect
import io
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib as _toml
except ImportError:                                   # Python < 3.11
    import tomli as _toml

from .algorithms import FbsController, ProxGradController, SqpBuildingController
from .analysis import StabilityCertificate, build_certificate, lipschitz_v_quadratic
from .closed_loop import LoopConfig, run, tracking_report
from .ge import SolutionOracle, assemble_game_ge, GeProblem
from .operators import Box, SetValuedOp, project
from .plant import (
    DisturbanceSignal,
    build_building,
    build_siso_plant,
    build_supply_chain,
    constant_disturbance,
    lti_lyapunov,
    ramp_disturbance,
    surge_disturbance,
)

__all__ = [
    "Scenario",
    "ScenarioResult",
    "ConfigError",
    "scenario_siso",
    "scenario_supply_chain",
    "scenario_building",
    "HysteresisController",
    "load_config",
    "dumps_config",
    "default_config",
    "scenario_from_config",
    "SCENARIO_KINDS",
]


class ConfigError(ValueError):
    """Malformed or inconsistent scenario configuration."""


# ---------------------------------------------------------------------------
# Scenario container


@dataclass
class ScenarioResult:
    trace: object
    report: dict
    integrals: dict
    checks: dict                     # name -> bool
    baseline_trace: object = None
    baseline_report: dict = None
    baseline_integrals: dict = None

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


@dataclass
class Scenario:
    """A reproducible closed-loop experiment.

    ``checks`` maps names to predicates on the finished :class:`ScenarioResult`
    (evaluated last, with ``checks`` still empty).  ``integrands`` maps names
    to pointwise functions ``(t, x, y, u) -> float`` integrated over the dense
    trace by the trapezoid rule.  ``baseline_controller`` is an optional
    comparison policy run under identical conditions.
    """

    name: str
    plant: object
    controller: object
    disturbance: DisturbanceSignal
    loop_config: LoopConfig
    lyap: object = None
    certificate: StabilityCertificate = None
    report_kwargs: dict = field(default_factory=dict)
    integrands: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    baseline_controller: object = None
    config: dict = None

    def _run_once(self, controller):
        cfg = self.loop_config
        if controller is not self.controller and cfg.z0 is not None:
            # comparison policies keep their own initial state
            cfg = dataclasses.replace(cfg, z0=None)
        trace = run(self.plant, controller, self.disturbance, cfg, lyap=self.lyap)
        kwargs = dict(self.report_kwargs)
        report = tracking_report(trace, **kwargs)
        integrals = {}
        for name, fn in self.integrands.items():
            vals = np.array(
                [fn(t, x, y, u) for t, x, y, u in
                 zip(trace.dense_t, trace.dense_x, trace.dense_y, trace.dense_u)]
            )
            integrals[name] = float(np.trapezoid(vals, trace.dense_t))
        return trace, report, integrals

    def execute(self) -> ScenarioResult:
        trace, report, integrals = self._run_once(self.controller)
        result = ScenarioResult(trace=trace, report=report, integrals=integrals,
                                checks={})
        if self.baseline_controller is not None:
            bt, br, bi = self._run_once(self.baseline_controller)
            result.baseline_trace = bt
            result.baseline_report = br
            result.baseline_integrals = bi
        result.checks = {name: bool(fn(result)) for name, fn in self.checks.items()}
        return result


# ---------------------------------------------------------------------------
# Set-point seeking on the lightly damped second-order plant


def scenario_siso(tau=8.0, gamma=0.8, schedule="constant", disturbance="zero",
                  horizon=None, substeps=20, y_ref=1.0, ramp_slope=0.05) -> Scenario:
    """Projected-gradient set-point seeking on the oscillatory SISO plant.

    ``disturbance='zero'`` holds w = 0 (regulation study: converges for
    sampling periods above the certified threshold, diverges well below it).
    ``disturbance='ramp'`` drifts w at ``ramp_slope`` per time unit (tracking
    study: constant steps keep a bounded lag, vanishing steps fall behind).
    """
    if disturbance not in ("zero", "ramp"):
        raise ConfigError(f"unknown disturbance {disturbance!r}")
    if horizon is None:
        horizon = 184.0 if disturbance == "ramp" else 400.0

    plant = build_siso_plant()
    box = plant.u_set
    controller = ProxGradController(gamma=gamma, y_ref=y_ref, box=box,
                                    schedule=schedule)
    lyap = lti_lyapunov(plant.lti_A)

    certificate = None
    if schedule == "constant" and 0.0 < gamma < 2.0:
        # one projected-gradient step on h(u, w) = u + w contracts with factor
        # |1 - gamma| toward clip(y_ref - w); V moves along dp/du with the
        # iterate confined to the +-10 box
        direction = plant.p(np.array([1.0]), np.zeros(1)) - plant.p(
            np.zeros(1), np.zeros(1)
        )
        direction = direction / np.linalg.norm(direction)
        L_V = lipschitz_v_quadratic(lyap.P, direction, radius=10.0)
        eta = abs(1.0 - gamma)
        if 0.0 < eta < 1.0:
            certificate = build_certificate(
                lyap, L_V=L_V, L_z=1.0, L_T=gamma, L_g=1.0, L_q=1.0, eta=eta,
            )

    ge = GeProblem(
        dim_z=1, dim_s=1,
        g_map=lambda z, s: s - np.atleast_1d(y_ref),
        a_op=SetValuedOp(kind="normal_cone", cset=box),
        q_map=lambda z: z,
    )
    gamma_fp = gamma if schedule == "constant" else min(gamma, 1.0)
    oracle = SolutionOracle(
        problem=ge,
        condensed_map=lambda z, wv: project(
            box, z - gamma_fp * (plant.h(z, wv) - y_ref)
        ),
        tol=1e-13,
    )

    config = {
        "scenario": {
            "kind": "siso",
            "params": {
                "tau": float(tau), "gamma": float(gamma), "schedule": schedule,
                "disturbance": disturbance, "horizon": float(horizon),
                "substeps": int(substeps), "y_ref": float(y_ref),
                "ramp_slope": float(ramp_slope),
            },
        }
    }

    checks = {}
    report_kwargs = {"burn_in": 0.5}
    if disturbance == "zero":
        w = constant_disturbance(0.0)
        if certificate is not None and tau > certificate.tau_bar:
            checks["regulation-converges"] = lambda r: r.report["converged"]
        elif tau <= 1.0:
            checks["fast-sampling-destabilizes"] = lambda r: r.report["diverged"]
        else:
            checks["no-blow-up"] = lambda r: not r.report["blow_up"]
    else:
        w = ramp_disturbance(0.0, ramp_slope)
        report_kwargs["unstable_threshold"] = np.inf
        if schedule == "vanishing":
            def growing_lag(r):
                e = r.trace.e_norm
                return e[-1] > 5.0 * max(e[r.trace.n_samples // 4], 1e-12)
            checks["vanishing-steps-fall-behind"] = growing_lag
        else:
            def bounded_lag(r):
                e = r.trace.e_norm[r.report["burn_in_index"]:]
                return float(np.nanmax(e)) <= 2.0 * float(np.nanmedian(e))
            checks["constant-steps-keep-bounded-lag"] = bounded_lag

    return Scenario(
        name="siso",
        plant=plant,
        controller=controller,
        disturbance=w,
        loop_config=LoopConfig(tau=tau, horizon=horizon, x0=np.zeros(2),
                               z0=np.zeros(1), substeps=substeps, oracle=oracle),
        lyap=lyap,
        certificate=certificate,
        report_kwargs=report_kwargs,
        checks=checks,
        config=config,
    )


# ---------------------------------------------------------------------------
# Competitive supply chain under a demand surge


def scenario_supply_chain(seed=7, tau=7.0, horizon=364.0, substeps=56,
                          surge_factor=3.0, t_surge=120.0) -> Scenario:
    """Weekly decentralized price updates for three coupled producers.

    Baseline demand holds for the first ``t_surge`` days, then triples.  The
    average-price cap is inactive before the surge (idle multiplier) and
    binds afterwards; the checks verify that the coordinator's multiplier
    wakes up, the cap violation settles below 1e-3, and the prices track the
    variational equilibrium of the current demand.
    """
    plant, game, params = build_supply_chain(seed=seed, surge_factor=surge_factor,
                                             t_surge=t_surge)
    controller = FbsController(game)
    lyap = lti_lyapunov(plant.lti_A)
    ge = assemble_game_ge(game, dim_s=plant.dim_y)
    n = game.dim_u
    oracle = SolutionOracle(
        problem=ge,
        condensed_map=lambda z, wv: controller.fixed_point_map(
            z, plant.h(z[:n], wv)
        ),
        tol=1e-12,
        max_iter=200_000,
    )
    w = surge_disturbance(params.d_base, params.surge_factor, params.t_surge)
    z0 = np.zeros(n + game.n_coupling)
    x0 = plant.p(np.zeros(n), params.d_base)
    k_surge = int(np.ceil(params.t_surge / tau))
    cap = params.sigma_cap_avg

    def idle_pre_surge(r):
        lam = r.trace.z[:k_surge, n:]
        return float(np.abs(lam).max()) <= 1e-9

    def active_post_surge(r):
        return float(r.trace.z[-1, n:].min()) > 1e-3

    def cap_settles(r):
        viol = max(0.0, float(np.mean(r.trace.z[-1, :n])) - cap)
        return viol < 1e-3

    def prices_track(r):
        k0 = r.report["burn_in_index"]
        err = np.linalg.norm(r.trace.z[k0:, :n] - r.trace.zstar[k0:, :n], axis=1)
        scale = float(np.abs(r.trace.zstar[:, :n]).max())
        return float(np.nanmax(err)) <= 0.05 * scale

    config = {
        "scenario": {
            "kind": "supply_chain",
            "params": {
                "seed": int(seed), "tau": float(tau), "horizon": float(horizon),
                "substeps": int(substeps), "surge_factor": float(surge_factor),
                "t_surge": float(t_surge),
            },
        }
    }

    return Scenario(
        name="supply_chain",
        plant=plant,
        controller=controller,
        disturbance=w,
        loop_config=LoopConfig(tau=tau, horizon=horizon, x0=x0, z0=z0,
                               substeps=substeps, oracle=oracle),
        lyap=lyap,
        report_kwargs={"burn_in": 0.5, "unstable_threshold": np.inf},
        checks={
            "multiplier-idle-pre-surge": idle_pre_surge,
            "multiplier-active-post-surge": active_post_surge,
            "cap-violation-settles": cap_settles,
            "prices-track-equilibrium": prices_track,
        },
        config=config,
    )


# ---------------------------------------------------------------------------
# Building climate control: SQP economic controller vs. hysteresis baseline


class HysteresisController:
    """Rule-based comparison policy for the building study.

    Per-room radiators switch on below the lower comfort band and off at the
    band midpoint; the air-handling heater/cooler act on the mean room
    temperature with the same deadband.  The fan stays off: moving ambient
    air only loses heat in this surrogate, so running it would handicap the
    baseline for no benefit.
    """

    kind = "hysteresis"

    def __init__(self, params, z0=None):
        self.bp = params
        nr = params.n_rooms
        self.heat_on = False
        self.cool_on = False
        self.rad_on = np.zeros(nr, dtype=bool)
        u0 = self._compose()
        self.z = u0 if z0 is None else np.atleast_1d(np.asarray(z0, float)).copy()
        self.k = 0

    def _compose(self):
        bp = self.bp
        u = np.array(bp.u_lower, dtype=float)
        if self.heat_on:
            u[1] = bp.u_upper[1]
        if self.cool_on:
            u[2] = bp.u_upper[2]
        u[3:] = np.where(self.rad_on, bp.u_upper[3:], bp.u_lower[3:])
        return u

    def q(self, z=None):
        return (self.z if z is None else np.asarray(z, float)).copy()

    def step(self, y):
        bp = self.bp
        temps = np.asarray(y, dtype=float)[: bp.n_rooms]
        mid = 0.5 * (bp.t_min + bp.t_max)
        mean_t = float(temps.mean())
        if mean_t <= bp.t_min:
            self.heat_on = True
        elif mean_t >= mid:
            self.heat_on = False
        if mean_t >= bp.t_max:
            self.cool_on = True
        elif mean_t <= mid:
            self.cool_on = False
        self.rad_on = np.where(
            temps <= bp.t_min, True, np.where(temps >= mid, False, self.rad_on)
        )
        self.z = self._compose()
        self.k += 1
        return self.z


def _occupancy_counts(seed, n_slots, n_rooms, occupants=15):
    """Seeded occupant Markov chain: per slot each occupant is away or in one
    room; arrivals/departures follow an office-hours profile and occupants
    occasionally change rooms.  Returns per-room head counts per slot."""
    rng = np.random.default_rng(seed)
    state = np.zeros(occupants, dtype=int)          # 0 = away, 1..n_rooms
    counts = np.zeros((n_slots, n_rooms))
    slot_hours = 0.25
    for k in range(n_slots):
        hour = (k * slot_hours) % 24.0
        working = 8.0 <= hour < 18.0
        p_arrive = 0.6 if working else 0.02
        p_leave = 0.05 if working else 0.5
        for i in range(occupants):
            r = rng.random()
            if state[i] == 0:
                if r < p_arrive:
                    state[i] = 1 + int(rng.integers(n_rooms))
            elif r < p_leave:
                state[i] = 0
            elif r < p_leave + 0.1:
                state[i] = 1 + int(rng.integers(n_rooms))
        for i in range(occupants):
            if state[i] > 0:
                counts[k, state[i] - 1] += 1.0
    return counts


def building_weather(seed, days, n_rooms=5, slot=900.0):
    """Combined weather/occupancy disturbance for the building study.

    Ambient temperature and solar gain follow smooth diurnal profiles; the
    occupancy head counts are a seeded Markov chain held constant over
    15-minute slots (the slot edges are reported as rate-bound exceptions).
    """
    n_slots = int(np.ceil(days * 86400.0 / slot))
    occ = _occupancy_counts(seed, n_slots, n_rooms)
    day = 86400.0

    def value(t):
        ta = 13.0 + 5.0 * np.sin(2.0 * np.pi * t / day - 0.5 * np.pi)
        tg = 12.0
        hour = (t / 3600.0) % 24.0
        qsol = 600.0 * max(0.0, np.sin(np.pi * (hour - 6.0) / 12.0))
        k = min(int(t // slot), n_slots - 1)
        return np.concatenate([[ta, tg, qsol], occ[k]])

    smooth_rate = np.hypot(5.0 * 2.0 * np.pi / day, 600.0 * np.pi / (12 * 3600.0))
    return DisturbanceSignal(
        kind="building_weather",
        value=value,
        derivative_bound=float(smooth_rate),
        jump_times=tuple(np.arange(1, n_slots) * slot),
    )


def scenario_building(seed=3, tau=180.0, days=3.0, substeps=6) -> Scenario:
    """Economic climate control of the five-room surrogate over three days.

    The SQP controller minimizes energy cost with a soft comfort band and is
    compared against the hysteresis baseline under identical weather and
    occupancy; the checks require feasible subproblems throughout and a
    strict win on both integrated cost and integrated comfort violation.
    """
    plant, nlp, bp = build_building()
    w = building_weather(seed, days, n_rooms=bp.n_rooms)
    # start settled just inside the comfort band: bisect a heating level whose
    # steady state puts the coldest room slightly above the tightened band,
    # so neither policy pays for an hours-long envelope warm-up transient
    w0 = w(0.0)
    u_hot = np.array([0.0, bp.u_upper[1], bp.u_lower[2], *bp.u_upper[3:]])
    u_off = np.array(bp.u_lower, dtype=float)
    t_start = bp.t_min + bp.comfort_backoff + 0.2

    def coldest(s):
        return float(np.min(plant.p(u_off + s * (u_hot - u_off), w0)[: bp.n_rooms]))

    lo, hi = 0.0, 1.0
    if coldest(1.0) > t_start:
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if coldest(mid) < t_start:
                lo = mid
            else:
                hi = mid
    u0 = u_off + hi * (u_hot - u_off)
    x0 = plant.p(u0, w0)
    xi0 = plant.g(x0, w(0.0))
    z0 = np.concatenate([xi0, u0, np.zeros(nlp.dim_xi)])
    controller = SqpBuildingController(nlp, prices=bp.prices, eta=bp.eta,
                                       epsilon=bp.epsilon, z0=z0)
    baseline = HysteresisController(bp)
    nr = bp.n_rooms

    def comfort_violation(t, x, y, u):
        temps = np.asarray(y)[:nr]
        return float(
            np.sum(np.maximum(0.0, bp.t_min - temps)
                   + np.maximum(0.0, temps - bp.t_max))
        )

    def running_cost(t, x, y, u):
        return float(bp.prices @ u) + 0.5 * bp.epsilon * (
            float(np.dot(y, y)) + float(np.dot(u, u))
        )

    config = {
        "scenario": {
            "kind": "building",
            "params": {
                "seed": int(seed), "tau": float(tau), "days": float(days),
                "substeps": int(substeps),
            },
        }
    }

    return Scenario(
        name="building",
        plant=plant,
        controller=controller,
        disturbance=w,
        loop_config=LoopConfig(tau=tau, horizon=days * 86400.0, x0=x0, z0=z0,
                               substeps=substeps),
        report_kwargs={"burn_in": 0.5, "unstable_threshold": np.inf,
                       "violation_fn": comfort_violation},
        integrands={"cost": running_cost, "comfort_violation": comfort_violation},
        checks={
            "subproblems-feasible": lambda r: r.report["fault"] is None,
            "no-blow-up": lambda r: not r.report["blow_up"],
            "cheaper-than-hysteresis": lambda r: (
                r.integrals["cost"] < r.baseline_integrals["cost"]
            ),
            "more-comfortable-than-hysteresis": lambda r: (
                r.integrals["comfort_violation"]
                < r.baseline_integrals["comfort_violation"]
            ),
        },
        baseline_controller=baseline,
        config=config,
    )


# ---------------------------------------------------------------------------
# Config files


SCENARIO_KINDS = {
    "siso": scenario_siso,
    "supply_chain": scenario_supply_chain,
    "building": scenario_building,
}


def default_config(kind: str) -> dict:
    """The config mapping that reproduces a scenario's builder defaults."""
    if kind not in SCENARIO_KINDS:
        raise ConfigError(f"unknown scenario kind {kind!r}")
    return SCENARIO_KINDS[kind]().config


def scenario_from_config(cfg: dict) -> Scenario:
    """Build a scenario from a parsed config mapping, validating every key."""
    if not isinstance(cfg, dict) or "scenario" not in cfg:
        raise ConfigError("config must contain a [scenario] table")
    sc = cfg["scenario"]
    if not isinstance(sc, dict):
        raise ConfigError("[scenario] must be a table")
    kind = sc.get("kind")
    if kind not in SCENARIO_KINDS:
        raise ConfigError(
            f"unknown scenario kind {kind!r}; expected one of {sorted(SCENARIO_KINDS)}"
        )
    params = sc.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("[scenario.params] must be a table")
    builder = SCENARIO_KINDS[kind]
    allowed = set(inspect.signature(builder).parameters)
    unknown = set(params) - allowed
    if unknown:
        raise ConfigError(f"unknown parameters for {kind!r}: {sorted(unknown)}")
    for key, val in params.items():
        if not isinstance(val, (int, float, str, bool)):
            raise ConfigError(f"parameter {key!r} must be a scalar, got {type(val)}")
    try:
        return builder(**params)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid parameters for {kind!r}: {exc}") from exc


def load_config(path) -> dict:
    """Parse a scenario TOML file into a plain mapping."""
    try:
        with open(path, "rb") as fh:
            return _toml.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except _toml.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}")


def _toml_scalar(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, str):
        escaped = v.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_scalar(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize {type(v)} to TOML")


def dumps_config(cfg: dict) -> str:
    """Serialize a nested mapping of scalars to TOML text.

    Emits only the subset of TOML the configs use (tables of scalars and
    flat lists); round-trips exactly through the stdlib parser.
    """
    out = io.StringIO()

    def emit(table, path):
        scalars = {k: v for k, v in table.items() if not isinstance(v, dict)}
        subtables = {k: v for k, v in table.items() if isinstance(v, dict)}
        if path and (scalars or not subtables):
            out.write(f"[{'.'.join(path)}]\n")
        for k, v in scalars.items():
            out.write(f"{k} = {_toml_scalar(v)}\n")
        for k, v in subtables.items():
            emit(v, path + [k])

    emit(cfg, [])
    return out.getvalue()
