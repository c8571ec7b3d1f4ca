"""Sampled-data interconnection of a continuous-time plant and an
equilibrium-seeking controller.

Event order per sample k: integrate the plant over [t^k, t^{k+1}] with the
held input u^k, measure y(t^{k+1}), update the controller with that
measurement, and hold the new input.  The trace records everything needed
for tracking and stability analysis, including the per-sample reference
z*(w(t^k)) from a warm-started solution oracle when one is configured.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .algorithms import ControllerFault
from .ge import NonConvergence, SolutionOracle
from .plant import BLOWUP_NORM, DisturbanceSignal, PlantModel, integrate_hold

__all__ = ["LoopConfig", "ClosedLoopTrace", "run", "tracking_report"]


@dataclass(frozen=True)
class LoopConfig:
    tau: float
    horizon: float
    x0: np.ndarray
    z0: np.ndarray = None           # default: the controller's current state
    substeps: int = 8
    oracle: SolutionOracle = None   # optional reference-branch solver

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("sampling period tau must be positive")
        if self.horizon < self.tau:
            raise ValueError("horizon must cover at least one sample")
        object.__setattr__(self, "x0", np.atleast_1d(np.asarray(self.x0, float)))
        if self.z0 is not None:
            object.__setattr__(self, "z0", np.atleast_1d(np.asarray(self.z0, float)))

    @property
    def n_samples(self) -> int:
        return int(round(self.horizon / self.tau))


@dataclass
class ClosedLoopTrace:
    """Per-sample and dense records of one closed-loop run.

    Arrays are indexed by sample k = 0..n; interval quantities (the
    disturbance-rate bound d) have length n.  Reference-dependent columns
    (zstar, e_norm, W) are NaN when no oracle was configured or the oracle
    lost the branch.
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    u: np.ndarray
    zstar: np.ndarray
    e_norm: np.ndarray
    W: np.ndarray
    V: np.ndarray
    d: np.ndarray
    dense_t: np.ndarray
    dense_x: np.ndarray
    dense_y: np.ndarray
    dense_u: np.ndarray
    diverged: bool = False
    divergence_time: float = None
    fault: str = None
    oracle_failures: int = 0

    @property
    def n_samples(self) -> int:
        return self.t.size - 1

    def column_header(self):
        """Fixed CSV column order for the per-sample table."""
        cols = ["t"]
        cols += [f"x{i}" for i in range(self.x.shape[1])]
        cols += [f"y{i}" for i in range(self.y.shape[1])]
        cols += [f"z{i}" for i in range(self.z.shape[1])]
        cols += [f"u{i}" for i in range(self.u.shape[1])]
        cols += [f"zstar{i}" for i in range(self.zstar.shape[1])]
        cols += ["e_norm", "W", "V", "d"]
        return cols

    def rows(self):
        """Per-sample rows matching ``column_header`` (d padded with NaN)."""
        n = self.t.size
        d_pad = np.full(n, np.nan)
        d_pad[: self.d.size] = self.d
        return np.column_stack(
            [self.t, self.x, self.y, self.z, self.u, self.zstar,
             self.e_norm, self.W, self.V, d_pad]
        )

    def dense_header(self):
        cols = ["t"]
        cols += [f"x{i}" for i in range(self.dense_x.shape[1])]
        cols += [f"y{i}" for i in range(self.dense_y.shape[1])]
        cols += [f"u{i}" for i in range(self.dense_u.shape[1])]
        return cols

    def dense_rows(self):
        return np.column_stack(
            [self.dense_t, self.dense_x, self.dense_y, self.dense_u]
        )


def _merit(controller, z, zstar):
    diff = z - zstar
    metric = getattr(controller, "metric", None)
    if metric is not None:
        return metric.norm(diff)
    return float(np.linalg.norm(diff))


def run(plant: PlantModel, controller, w: DisturbanceSignal,
        config: LoopConfig, lyap=None) -> ClosedLoopTrace:
    """Simulate the sampled-data loop and return the full trace.

    ``lyap`` is an optional LyapunovData certificate; when given, the plant
    Lyapunov value V^k = |x^k - p(u^k, w(t^k))|_P is recorded.  Controller
    faults and plant blow-ups terminate the run early with a partial trace
    and the failure recorded.
    """
    n = config.n_samples
    tau = config.tau
    if config.z0 is not None:
        controller.z = config.z0.copy()
        controller.k = 0
    x = config.x0.copy()
    z = controller.z.copy()
    u = controller.q(z)

    t_arr = np.arange(n + 1) * tau
    xs = np.full((n + 1, plant.dim_x), np.nan)
    ys = np.full((n + 1, plant.dim_y), np.nan)
    zs = np.full((n + 1, z.size), np.nan)
    us = np.full((n + 1, u.size), np.nan)
    zstars = np.full((n + 1, z.size), np.nan)
    e_norm = np.full(n + 1, np.nan)
    W_arr = np.full(n + 1, np.nan)
    V_arr = np.full(n + 1, np.nan)
    d_arr = np.full(n, np.nan)
    dense_t, dense_x, dense_y, dense_u = [], [], [], []

    oracle = config.oracle
    zstar = None
    oracle_failures = 0
    if oracle is not None:
        try:
            zstar = oracle.solve(w(0.0), z)
        except NonConvergence:
            oracle_failures += 1

    diverged = False
    div_time = None
    fault = None

    def record(k, t_k):
        xs[k] = x
        ys[k] = plant.g(x, w(t_k))
        zs[k] = z
        us[k] = u
        if zstar is not None:
            zstars[k] = zstar
            e_norm[k] = float(np.linalg.norm(z - zstar))
            W_arr[k] = _merit(controller, z, zstar)
        if lyap is not None:
            dx = x - plant.p(u, w(t_k))
            V_arr[k] = float(math.sqrt(max(dx @ (lyap.P @ dx), 0.0)))

    record(0, 0.0)
    last_k = 0
    for k in range(n):
        t_k = k * tau
        d_arr[k] = w.rate_bound(t_k, t_k + tau)
        res = integrate_hold(plant, x, u, w, t_k, tau, config.substeps)
        start = 0 if k == 0 else 1  # skip the duplicated interval endpoint
        dense_t.extend(res.ts[start:])
        dense_x.extend(res.xs[start:])
        dense_y.extend(plant.g(xi, w(ti)) for ti, xi in
                       zip(res.ts[start:], res.xs[start:]))
        dense_u.extend([u.copy()] * (res.ts.size - start))
        x = res.x_end
        last_k = k + 1
        if res.diverged:
            diverged = True
            div_time = res.blowup_time
            xs[k + 1] = x
            break
        y = plant.g(x, w(t_k + tau))
        try:
            z = controller.step(y)
        except ControllerFault as exc:
            fault = str(exc)
            xs[k + 1] = x
            ys[k + 1] = y
            break
        u = controller.q(z)
        if np.linalg.norm(z) > BLOWUP_NORM:
            diverged = True
            div_time = t_k + tau
            xs[k + 1] = x
            ys[k + 1] = y
            zs[k + 1] = z
            break
        if oracle is not None:
            warm = zstar if zstar is not None else z
            try:
                zstar = oracle.solve(w(t_k + tau), warm)
            except NonConvergence as exc:
                oracle_failures += 1
                zstar = exc.z_last if exc.z_last is not None else None
        record(k + 1, t_k + tau)

    m = last_k + 1
    return ClosedLoopTrace(
        t=t_arr[:m], x=xs[:m], y=ys[:m], z=zs[:m], u=us[:m],
        zstar=zstars[:m], e_norm=e_norm[:m], W=W_arr[:m], V=V_arr[:m],
        d=d_arr[: max(last_k, 0)],
        dense_t=np.asarray(dense_t), dense_x=np.asarray(dense_x),
        dense_y=np.asarray(dense_y), dense_u=np.asarray(dense_u),
        diverged=diverged, divergence_time=div_time, fault=fault,
        oracle_failures=oracle_failures,
    )


def tracking_report(trace: ClosedLoopTrace, burn_in=0.5, converge_tol=1e-3,
                    unstable_threshold=1.0, merit_slack=1e-10,
                    violation_fn=None):
    """Deterministic summary of a trace.

    ``violation_fn(t, x, y, u) -> float`` is an optional pointwise constraint
    violation measure, integrated over the dense trace by the trapezoid rule.
    ``diverged`` flags blow-up or sustained post-burn-in error above
    ``unstable_threshold`` without convergence (bounded limit cycles of a
    projected iteration count as instability, not blow-up).
    """
    if trace.n_samples < 1:
        raise ValueError("empty trace")
    n = trace.n_samples
    k0 = int(burn_in * n)
    e = trace.e_norm
    have_ref = bool(np.any(np.isfinite(e)))
    sup_e = float(np.nanmax(e[k0:])) if have_ref and np.any(
        np.isfinite(e[k0:])
    ) else math.nan
    terminal_e = float(e[-1]) if have_ref else math.nan
    sup_V = float(np.nanmax(trace.V)) if np.any(np.isfinite(trace.V)) else math.nan

    W = trace.W
    merit_violations = 0
    if have_ref:
        for k in range(len(W) - 1):
            if np.isfinite(W[k]) and np.isfinite(W[k + 1]):
                if W[k + 1] > W[k] + merit_slack:
                    merit_violations += 1

    violation_integral = math.nan
    if violation_fn is not None and trace.dense_t.size > 1:
        vals = np.array(
            [
                violation_fn(t, xr, yr, ur)
                for t, xr, yr, ur in zip(
                    trace.dense_t, trace.dense_x, trace.dense_y, trace.dense_u
                )
            ]
        )
        violation_integral = float(np.trapezoid(vals, trace.dense_t))

    converged = bool(
        have_ref and np.isfinite(terminal_e) and terminal_e <= converge_tol
        and trace.fault is None and not trace.diverged
    )
    unstable = bool(
        have_ref and np.isfinite(sup_e) and sup_e > unstable_threshold
        and not converged
    )
    diverged = bool(trace.diverged or unstable)

    return {
        "samples": n,
        "burn_in_index": k0,
        "sup_e_after_burn_in": sup_e,
        "terminal_e": terminal_e,
        "sup_V": sup_V,
        "merit_violations": merit_violations,
        "violation_integral": violation_integral,
        "converged": converged,
        "diverged": diverged,
        "blow_up": bool(trace.diverged),
        "fault": trace.fault,
        "oracle_failures": trace.oracle_failures,
    }
