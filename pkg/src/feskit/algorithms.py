"""Controller update rules: one discrete iteration z+ = T(z, s) of an
equilibrium-seeking algorithm, driven online by plant measurements.

Four controller kinds are provided:

* ProxGradController -- projected (proximal) gradient on a box, with an
  optional vanishing step schedule,
* FbsController      -- semi-decentralized forward-backward splitting for
  generalized Nash games with affine coupling,
* JnController       -- Josephy-Newton / SQP step on the KKT system of a
  smooth constrained program,
* SqpBuildingController -- SQP step with slack variables for the one-sided
  comfort penalty of the building study.

Every controller exposes ``fixed_point_map(z, s)`` (a pure one-step map with
constant gains, used by solution oracles and property probes) and the
stateful ``step(s)``.
"""

from __future__ import annotations

import numpy as np

from . import qp
from .ge import GameProblem, KktNlpProblem
from .operators import Box, FbsMetric, Polyhedron, project

__all__ = [
    "ControllerFault",
    "prox_grad_step",
    "vanishing_schedule",
    "ProxGradController",
    "FbsController",
    "JnController",
    "SqpBuildingController",
]


class ControllerFault(Exception):
    """Controller step failed (subproblem infeasible or non-finite state)."""


def vanishing_schedule(k: int, gamma0: float) -> float:
    """Harmonic step sequence gamma0/(k+1): divergent sum, summable squares."""
    if k < 0:
        raise ValueError("iteration index must be nonnegative")
    return gamma0 / (k + 1)


def prox_grad_step(z, y, y_ref, gamma, box: Box):
    """proj_box(z - gamma (y - y_ref)); one projected-gradient iteration."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return project(box, z - gamma * (y - np.atleast_1d(y_ref)))


class _ControllerBase:
    kind = "abstract"

    def __init__(self, z0):
        self.z = np.atleast_1d(np.asarray(z0, dtype=float)).copy()
        self.k = 0

    @property
    def dim_z(self) -> int:
        return self.z.size

    def q(self, z=None):
        """Input extraction u = q(z); identity unless overridden."""
        z = self.z if z is None else np.asarray(z, dtype=float)
        return z.copy()

    def fixed_point_map(self, z, s):
        raise NotImplementedError

    def _update(self, z, s):
        return self.fixed_point_map(z, s)

    def step(self, s):
        z_next = np.atleast_1d(self._update(self.z, np.asarray(s, dtype=float)))
        if not np.all(np.isfinite(z_next)):
            raise ControllerFault(
                f"{self.kind} produced a non-finite state at step {self.k}: {z_next}"
            )
        self.z = z_next
        self.k += 1
        return z_next


class ProxGradController(_ControllerBase):
    """Set-point seeking by projected gradient: z+ = proj(z - gamma(y - y_ref))."""

    kind = "prox_grad"

    def __init__(self, gamma, y_ref, box: Box, z0=None, schedule="constant"):
        if schedule not in ("constant", "vanishing"):
            raise ValueError(f"unknown schedule {schedule!r}")
        if schedule == "constant" and not 0.0 < gamma <= 1.0:
            raise ValueError("constant-step gamma must lie in (0, 1]")
        if gamma <= 0:
            raise ValueError("gamma must be positive")
        super().__init__(np.zeros(box.dim) if z0 is None else z0)
        self.gamma = float(gamma)
        self.y_ref = np.atleast_1d(np.asarray(y_ref, dtype=float))
        self.box = box
        self.schedule = schedule

    def fixed_point_map(self, z, s):
        return prox_grad_step(z, s, self.y_ref, self.gamma, self.box)

    def _update(self, z, s):
        g = self.gamma
        if self.schedule == "vanishing":
            g = vanishing_schedule(self.k, self.gamma)
        return prox_grad_step(z, s, self.y_ref, g, self.box)


class FbsController(_ControllerBase):
    """Semi-decentralized forward-backward splitting on the game KKT system.

    State z = (u, lambda).  Each agent takes a projected pseudo-gradient step
    using only its own measurement block and the broadcast multiplier; the
    coordinator then updates lambda from the reflected aggregate.  Default
    gains are the admissible bounds gamma_i = 1/(|A_i| + delta),
    gamma_c = 1/(sum_i |A_i| + delta) with delta > ell_tilde^2/(2 mu_tilde).
    """

    kind = "fbs"

    def __init__(self, game: GameProblem, z0=None, delta=None, gammas=None,
                 gamma_c=None):
        self.game = game
        n_u, m = game.dim_u, game.n_coupling
        blocks = []
        off = 0
        for d in game.local_dims:
            blocks.append(game.coupling_A[:, off : off + d])
            off += d
        col_norms = np.array(
            [np.linalg.norm(B, 2) if B.size else 0.0 for B in blocks]
        )
        delta_min = game.ell_tilde**2 / (2.0 * game.mu_tilde)
        if delta is None:
            delta = 1.001 * max(delta_min, 1e-12)
        if delta <= delta_min:
            raise ValueError(
                f"delta={delta:.6g} violates delta > ell^2/(2 mu) = {delta_min:.6g}"
            )
        if gammas is None:
            gammas = 1.0 / (col_norms + delta)
        gammas = np.atleast_1d(np.asarray(gammas, dtype=float))
        if gamma_c is None:
            gamma_c = 1.0 / (col_norms.sum() + delta)
        if np.any(gammas > 1.0 / (col_norms + delta) + 1e-12):
            raise ValueError("agent step sizes exceed the admissible bound")
        if gamma_c > 1.0 / (col_norms.sum() + delta) + 1e-12:
            raise ValueError("coordinator step size exceeds the admissible bound")
        super().__init__(np.zeros(n_u + m) if z0 is None else z0)
        self.delta = float(delta)
        self.gammas = gammas
        self.gamma_c = float(gamma_c)
        # preconditioner with one step size per scalar action component
        per_comp = np.concatenate(
            [np.full(d, gammas[i]) for i, d in enumerate(game.local_dims)]
        )
        self.metric = FbsMetric(gammas=per_comp, gamma_c=self.gamma_c,
                                A=game.coupling_A)

    def q(self, z=None):
        z = self.z if z is None else np.asarray(z, dtype=float)
        return z[: self.game.dim_u].copy()

    def fixed_point_map(self, z, s):
        game = self.game
        n_u, m = game.dim_u, game.n_coupling
        z = np.asarray(z, dtype=float)
        u, lam = z[:n_u], z[n_u:]
        Alam = game.coupling_A.T @ lam if m else np.zeros(n_u)
        u_plus = np.empty(n_u)
        off = 0
        for i, d in enumerate(game.local_dims):
            sl = slice(off, off + d)
            Fi = np.atleast_1d(game.partial_gradients[i](u, s))
            u_plus[sl] = project(
                game.local_sets[i], u[sl] - self.gammas[i] * (Fi + Alam[sl])
            )
            off += d
        if m:
            lam_plus = np.maximum(
                lam
                + self.gamma_c
                * (game.coupling_A @ (2.0 * u_plus - u) - game.coupling_b),
                0.0,
            )
        else:
            lam_plus = lam
        return np.concatenate([u_plus, lam_plus])


def _psd_clamp(M, floor=0.0):
    """Symmetric eigenvalue clamp onto the PSD cone."""
    M = 0.5 * (M + M.T)
    vals, vecs = np.linalg.eigh(M)
    if vals[0] >= floor:
        return M
    return (vecs * np.maximum(vals, floor)) @ vecs.T


def _du_inequalities(u_set, u, n_total, offset):
    """Rows G d <= g expressing u + d_u in U for d in R^{n_total}."""
    u = np.asarray(u, dtype=float)
    d = u.size
    if isinstance(u_set, Box):
        rows, rhs = [], []
        for j in range(d):
            if np.isfinite(u_set.upper[j]):
                r = np.zeros(n_total)
                r[offset + j] = 1.0
                rows.append(r)
                rhs.append(u_set.upper[j] - u[j])
            if np.isfinite(u_set.lower[j]):
                r = np.zeros(n_total)
                r[offset + j] = -1.0
                rows.append(r)
                rhs.append(u[j] - u_set.lower[j])
        if not rows:
            return np.zeros((0, n_total)), np.zeros(0)
        return np.vstack(rows), np.asarray(rhs, dtype=float)
    if isinstance(u_set, Polyhedron):
        G = np.zeros((u_set.B.shape[0], n_total))
        G[:, offset : offset + d] = u_set.B
        return G, u_set.b - u_set.B @ u
    raise TypeError(f"unsupported input set {type(u_set)!r}")


class JnController(_ControllerBase):
    """Josephy-Newton / SQP step on the KKT system of a smooth program
    min phi(xi, u) s.t. xi = h(u, w), u in U.

    State z = (xi, u, lambda).  Each step solves a QP in the direction
    d = (d_xi, d_u) linearized at z with the measured s replacing h(u, w);
    the new multiplier is read off the equality-row dual.  Hessian policy
    'exact' uses the program's (PSD-clamped) Hessian blocks, 'identity'
    substitutes the identity (a projected-gradient-like variant).
    """

    kind = "josephy_newton"

    def __init__(self, nlp: KktNlpProblem, z0=None, hessian_policy="exact",
                 kkt_tol=1e-8):
        if nlp.varphi is not None:
            raise ValueError(
                "JnController handles smooth costs only; use "
                "SqpBuildingController for the penalized case"
            )
        if hessian_policy not in ("exact", "identity"):
            raise ValueError(f"unknown hessian policy {hessian_policy!r}")
        super().__init__(np.zeros(nlp.dim_z) if z0 is None else z0)
        self.nlp = nlp
        self.hessian_policy = hessian_policy
        self.kkt_tol = kkt_tol

    def q(self, z=None):
        z = self.z if z is None else np.asarray(z, dtype=float)
        _, u, _ = self.nlp.split(z)
        return u.copy()

    def fixed_point_map(self, z, s):
        nlp = self.nlp
        xi, u, lam = nlp.split(np.asarray(z, dtype=float))
        s = np.atleast_1d(np.asarray(s, dtype=float))
        nxi, nu = nlp.dim_xi, nlp.dim_u
        n = nxi + nu
        if self.hessian_policy == "exact":
            Q, S, R = nlp.hess_phi(xi, u)
            H = np.block(
                [
                    [np.atleast_2d(np.asarray(Q, float)),
                     np.asarray(S, float).reshape(nu, nxi).T],
                    [np.asarray(S, float).reshape(nu, nxi),
                     np.atleast_2d(np.asarray(R, float))],
                ]
            )
            H = _psd_clamp(H)
        else:
            H = np.eye(n)
        g_xi, g_u = nlp.grad_phi(xi, u)
        f = np.concatenate([np.atleast_1d(g_xi), np.atleast_1d(g_u)])
        Hs = np.asarray(nlp.h_sensitivity(u, None), dtype=float)
        Aeq = np.hstack([np.eye(nxi), -Hs])
        beq = s - xi
        G, gvec = _du_inequalities(nlp.u_set, u, n, nxi)
        inst = qp.QpInstance(H=H, f=f, Aeq=Aeq, beq=beq, Aineq=G, bineq=gvec)
        try:
            sol = qp.solve_qp(inst, kkt_tol=self.kkt_tol)
        except (qp.QpInfeasible, qp.QpMaxIterations) as exc:
            raise ControllerFault(f"Newton-step QP failed: {exc}") from exc
        d_xi, d_u = sol.x[:nxi], sol.x[nxi:]
        lam_new = -sol.duals_eq
        return np.concatenate([xi + d_xi, u + d_u, lam_new])


class SqpBuildingController(_ControllerBase):
    """SQP step for the comfort-penalized energy cost of the building study.

    The one-sided temperature penalty is handled by per-room slack variables
    sigma_i, so each step solves (with measurement y and sensitivity grad_u h)

        min_{d_xi, d_u, sigma}  eps/2 |d|^2 + (1/2) d_u'c + eta/2 sum sigma_i
        s.t.  d_xi = grad_u h d_u + y - xi,   u + d_u in U,
              T_min - sigma_i <= xi_i + d_xi_i <= T_max + sigma_i,  sigma >= 0.

    The slack rows keep the QP feasible for every measurement, so an
    infeasible subproblem indicates an internal error and raises.
    """

    kind = "sqp_building"

    def __init__(self, nlp: KktNlpProblem, prices, eta, epsilon, z0=None,
                 kkt_tol=None):
        if eta <= 0 or epsilon <= 0:
            raise ValueError("eta and epsilon must be positive")
        if nlp.varphi is None:
            raise ValueError("the building program carries a comfort penalty")
        super().__init__(np.zeros(nlp.dim_z) if z0 is None else z0)
        self.nlp = nlp
        self.prices = np.atleast_1d(np.asarray(prices, dtype=float))
        self.eta = float(eta)
        self.epsilon = float(epsilon)
        if kkt_tol is None:
            # the multipliers live at the penalty-weight scale, so an absolute
            # KKT tolerance has to be scaled accordingly to be attainable
            kkt_tol = 1e-8 * max(1.0, 0.5 * self.eta, float(np.abs(self.prices).max()))
        self.kkt_tol = kkt_tol
        self.last_slacks = np.zeros(len(nlp.varphi.indices))

    def q(self, z=None):
        z = self.z if z is None else np.asarray(z, dtype=float)
        _, u, _ = self.nlp.split(z)
        return u.copy()

    def fixed_point_map(self, z, s):
        z_new, _ = self._solve_step(z, s)
        return z_new

    def _update(self, z, s):
        z_new, slacks = self._solve_step(z, s)
        self.last_slacks = slacks
        return z_new

    def _solve_step(self, z, s):
        nlp = self.nlp
        xi, u, lam = nlp.split(np.asarray(z, dtype=float))
        y = np.atleast_1d(np.asarray(s, dtype=float))
        nxi, nu = nlp.dim_xi, nlp.dim_u
        pen = nlp.varphi
        rooms = list(pen.indices)
        ns = len(rooms)
        n = nxi + nu + ns

        H = np.zeros((n, n))
        H[: nxi + nu, : nxi + nu] = self.epsilon * np.eye(nxi + nu)
        f = np.concatenate(
            [np.zeros(nxi), 0.5 * self.prices, 0.5 * self.eta * np.ones(ns)]
        )
        Hs = np.asarray(nlp.h_sensitivity(u, None), dtype=float)
        Aeq = np.hstack([np.eye(nxi), -Hs, np.zeros((nxi, ns))])
        beq = y - xi

        G_u, g_u = _du_inequalities(nlp.u_set, u, n, nxi)
        rows = [G_u]
        rhs = [g_u]
        for j, i in enumerate(rooms):
            up = np.zeros(n)
            up[i] = 1.0
            up[nxi + nu + j] = -1.0
            rows.append(up[None, :])
            rhs.append([pen.upper[j] - xi[i]])
            lo = np.zeros(n)
            lo[i] = -1.0
            lo[nxi + nu + j] = -1.0
            rows.append(lo[None, :])
            rhs.append([xi[i] - pen.lower[j]])
        Gs = np.zeros((ns, n))
        Gs[:, nxi + nu :] = -np.eye(ns)
        rows.append(Gs)
        rhs.append(np.zeros(ns))
        Aineq = np.vstack(rows)
        bineq = np.concatenate([np.atleast_1d(np.asarray(r, float)) for r in rhs])

        inst = qp.QpInstance(H=H, f=f, Aeq=Aeq, beq=beq, Aineq=Aineq, bineq=bineq)
        try:
            sol = qp.solve_qp(inst, kkt_tol=self.kkt_tol)
        except (qp.QpInfeasible, qp.QpMaxIterations) as exc:
            raise ControllerFault(f"slack QP failed unexpectedly: {exc}") from exc
        d_xi = sol.x[:nxi]
        d_u = sol.x[nxi : nxi + nu]
        slacks = sol.x[nxi + nu :]
        lam_new = -sol.duals_eq
        return np.concatenate([xi + d_xi, u + d_u, lam_new]), slacks
