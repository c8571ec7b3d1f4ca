"""Embedded convex quadratic program solver.

Solves
    min  0.5 x'Hx + f'x
    s.t. Aeq x = beq,  Aineq x <= bineq

for the small dense subproblems that arise in the Newton-type controller
steps and in polyhedral projection.  Equalities are eliminated through a
nullspace substitution, the reduced inequality-constrained problem is
solved by an over-relaxed ADMM iteration, and the result is polished by
re-solving the KKT system on the identified active set.  The returned
point satisfies the KKT conditions to ``kkt_tol`` in the infinity norm.

Dual sign convention: stationarity is written
    H x + f + Aeq' nu + Aineq' mu = 0,   mu >= 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla
from scipy import optimize as sopt

__all__ = ["QpInstance", "QpSolution", "QpInfeasible", "QpMaxIterations", "solve_qp"]

_EMPTY = None


class QpInfeasible(Exception):
    """Feasible set is empty; carries a Farkas-style certificate residual."""

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class QpMaxIterations(Exception):
    """ADMM failed to reach the requested tolerance within the iteration cap."""


@dataclass(frozen=True)
class QpInstance:
    H: np.ndarray
    f: np.ndarray
    Aeq: np.ndarray = None
    beq: np.ndarray = None
    Aineq: np.ndarray = None
    bineq: np.ndarray = None

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        f = np.atleast_1d(np.asarray(self.f, dtype=float))
        n = f.size
        if H.shape != (n, n):
            raise ValueError("H/f dimension mismatch")
        if not np.allclose(H, H.T, atol=1e-12 * max(1.0, np.abs(H).max())):
            raise ValueError("H is not symmetric")
        object.__setattr__(self, "H", 0.5 * (H + H.T))
        object.__setattr__(self, "f", f)
        for name, Aname, bname in (("eq", "Aeq", "beq"), ("ineq", "Aineq", "bineq")):
            A, b = getattr(self, Aname), getattr(self, bname)
            if A is None or np.size(A) == 0:
                object.__setattr__(self, Aname, np.zeros((0, n)))
                object.__setattr__(self, bname, np.zeros(0))
            else:
                A = np.atleast_2d(np.asarray(A, dtype=float))
                b = np.atleast_1d(np.asarray(b, dtype=float))
                if A.shape != (b.size, n):
                    raise ValueError(f"{name} constraint dimension mismatch")
                object.__setattr__(self, Aname, A)
                object.__setattr__(self, bname, b)

    @property
    def dim(self) -> int:
        return self.f.size


@dataclass(frozen=True)
class QpSolution:
    x: np.ndarray
    duals_eq: np.ndarray
    duals_ineq: np.ndarray
    kkt_residual: float
    iterations: int
    objective: float = field(default=np.nan)


def _kkt_residual(inst: QpInstance, x, nu, mu):
    stat = inst.H @ x + inst.f + inst.Aeq.T @ nu + inst.Aineq.T @ mu
    r = np.abs(stat).max() if stat.size else 0.0
    if inst.beq.size:
        r = max(r, np.abs(inst.Aeq @ x - inst.beq).max())
    if inst.bineq.size:
        slack = inst.bineq - inst.Aineq @ x
        r = max(r, max(0.0, -slack.min()))          # primal feasibility
        r = max(r, max(0.0, -mu.min()))             # dual feasibility
        r = max(r, np.abs(mu * slack).max())        # complementarity
    return float(r)


def _feasibility_certificate(inst: QpInstance):
    """LP feasibility probe; returns None if feasible, else a certificate."""
    n = inst.dim
    res = sopt.linprog(
        c=np.zeros(n),
        A_ub=inst.Aineq if inst.bineq.size else None,
        b_ub=inst.bineq if inst.bineq.size else None,
        A_eq=inst.Aeq if inst.beq.size else None,
        b_eq=inst.beq if inst.beq.size else None,
        bounds=[(None, None)] * n,
        method="highs",
    )
    if res.status == 2:  # infeasible
        return {"status": "infeasible", "message": res.message}
    return None


def _polish(inst, active, kkt_tol, s_obj=1.0):
    """Solve the equality-constrained KKT system on a candidate active set.

    Returns (x, nu, mu, residual) or None if no consistent active set is
    found.  An active-set cleanup loop drops rows with negative multipliers
    and adds violated rows, which turns the ADMM estimate into an
    (essentially) exact solution.  Lowest-index (Bland-style) add/drop rules
    and an active-set memo guard against cycling on degenerate problems; the
    KKT system is solved with the objective scaled by ``s_obj`` so that
    badly scaled penalty weights do not destroy its conditioning.
    """
    n = inst.dim
    m_eq = inst.beq.size
    Hs = inst.H / s_obj
    fs = inst.f / s_obj
    active = sorted(set(active))
    seen = set()
    for _ in range(min(6 * (inst.bineq.size + 1), 40)):
        key = tuple(active)
        if key in seen:
            return None
        seen.add(key)
        Ga = inst.Aineq[active]
        ha = inst.bineq[active]
        K = np.block(
            [
                [Hs, inst.Aeq.T, Ga.T],
                [inst.Aeq, np.zeros((m_eq, m_eq + len(active)))],
                [Ga, np.zeros((len(active), m_eq + len(active)))],
            ]
        )
        rhs = np.concatenate([-fs, inst.beq, ha])
        try:
            sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
        except np.linalg.LinAlgError:
            return None
        x_p = sol[:n]
        nu_s = sol[n : n + m_eq]
        mu_a = sol[n + m_eq :]
        # drop the lowest-index clearly negative multiplier, if any
        neg = np.where(mu_a < -1e-9)[0]
        if neg.size:
            del active[int(neg[0])]
            continue
        # add the lowest-index violated inactive row, if any
        slack = inst.bineq - inst.Aineq @ x_p
        viol = [i for i in np.where(slack < -1e-9)[0] if i not in active]
        if viol:
            active.append(int(viol[0]))
            active.sort()
            continue
        mu_p = np.zeros(inst.bineq.size)
        mu_p[active] = np.maximum(mu_a, 0.0) * s_obj
        nu_p = nu_s * s_obj
        return x_p, nu_p, mu_p, _kkt_residual(inst, x_p, nu_p, mu_p)
    return None


def _ipm_solve(inst: QpInstance, tol=1e-11, max_iter=60):
    """Mehrotra predictor-corrector interior-point iteration.

    Fallback for degenerate or badly scaled instances on which the
    operator-splitting iteration converges too slowly to certify.  Returns
    (x, nu, mu) or None if the iteration fails to make progress.
    """
    n = inst.dim
    me, mi = inst.beq.size, inst.bineq.size
    H, f = inst.H, inst.f
    Aeq, beq = inst.Aeq, inst.beq
    G, h = inst.Aineq, inst.bineq
    s_obj = max(1.0, np.abs(H).max() if H.size else 1.0, np.abs(f).max())
    Hs, fs = H / s_obj, f / s_obj

    if mi == 0:
        K = np.block([[Hs + 1e-12 * np.eye(n), Aeq.T], [Aeq, np.zeros((me, me))]])
        try:
            sol = np.linalg.solve(K, np.concatenate([-fs, beq]))
        except np.linalg.LinAlgError:
            return None
        return sol[:n], sol[n:] * s_obj, np.zeros(0)

    x = np.zeros(n)
    s = np.maximum(h - G @ x, 1.0)
    mu = np.ones(mi)
    nu = np.zeros(me)
    norm_scale = max(1.0, np.abs(fs).max(), np.abs(beq).max() if me else 0.0,
                     np.abs(h).max())
    for _ in range(max_iter):
        rd = Hs @ x + fs + Aeq.T @ nu + G.T @ mu
        rp1 = Aeq @ x - beq
        rp2 = G @ x + s - h
        gap = float(mu @ s) / mi
        if max(np.abs(rd).max(), np.abs(rp1).max() if me else 0.0,
               np.abs(rp2).max(), gap) < tol * norm_scale:
            break
        D = mu / s
        M = np.block(
            [
                [Hs + G.T @ (D[:, None] * G) + 1e-12 * np.eye(n), Aeq.T],
                [Aeq, np.zeros((me, me))],
            ]
        )
        try:
            lu, piv = sla.lu_factor(M)
        except (np.linalg.LinAlgError, ValueError):
            return None

        def newton(rc):
            rhs_x = -rd - G.T @ ((rc + mu * rp2) / s)
            sol = sla.lu_solve((lu, piv), np.concatenate([rhs_x, -rp1]))
            dx, dnu = sol[:n], sol[n:]
            ds = -rp2 - G @ dx
            dmu = (rc - mu * ds) / s
            return dx, dnu, ds, dmu

        # predictor (bail out to the current iterate if the nearly singular
        # Newton system produces a non-finite step)
        try:
            dx, dnu, ds, dmu = newton(-mu * s)
        except (ValueError, np.linalg.LinAlgError):
            break
        if not all(np.all(np.isfinite(v)) for v in (dx, dnu, ds, dmu)):
            break

        def max_step(v, dv):
            neg = dv < 0
            if not np.any(neg):
                return 1.0
            return min(1.0, float(np.min(-v[neg] / dv[neg])))

        a_aff = min(max_step(s, ds), max_step(mu, dmu))
        gap_aff = float((mu + a_aff * dmu) @ (s + a_aff * ds)) / mi
        sigma = (gap_aff / max(gap, 1e-300)) ** 3
        # corrector
        try:
            dx, dnu, ds, dmu = newton(sigma * gap - mu * s - ds * dmu)
        except (ValueError, np.linalg.LinAlgError):
            break
        if not all(np.all(np.isfinite(v)) for v in (dx, dnu, ds, dmu)):
            break
        a = 0.995 * min(max_step(s, ds), max_step(mu, dmu))
        x = x + a * dx
        nu = nu + a * dnu
        s = np.maximum(s + a * ds, 1e-300)
        mu = np.maximum(mu + a * dmu, 1e-300)
    return x, nu * s_obj, mu * s_obj


def _trust_region_solve(inst: QpInstance):
    """Last-ditch fallback via scipy's trust-region constrained minimizer.

    Slower than the splitting/interior-point paths but immune to the
    degenerate near-LP geometry that can defeat both (dependent active rows
    whose multipliers are not uniquely split).  Returns (x, nu, mu) or None.
    """
    n = inst.dim
    cons = []
    if inst.beq.size:
        cons.append(sopt.LinearConstraint(inst.Aeq, inst.beq, inst.beq))
    if inst.bineq.size:
        cons.append(sopt.LinearConstraint(inst.Aineq, -np.inf, inst.bineq))
    try:
        res = sopt.minimize(
            lambda x: 0.5 * x @ inst.H @ x + inst.f @ x,
            np.zeros(n),
            jac=lambda x: inst.H @ x + inst.f,
            hess=lambda x: inst.H,
            method="trust-constr",
            constraints=cons,
            options={"gtol": 1e-12, "xtol": 1e-14, "maxiter": 2000},
        )
    except Exception:
        return None
    if not res.v:
        return res.x, np.zeros(0), np.zeros(0)
    k = 0
    nu = np.zeros(0)
    if inst.beq.size:
        nu = np.atleast_1d(np.asarray(res.v[k], dtype=float))
        k += 1
    mu = np.zeros(inst.bineq.size)
    if inst.bineq.size:
        mu = np.maximum(np.atleast_1d(np.asarray(res.v[k], dtype=float)), 0.0)
    return res.x, nu, mu


def solve_qp(
    inst: QpInstance,
    kkt_tol: float = 1e-8,
    max_iter: int = 50_000,
    rho: float = 1.0,
    sigma: float = 1e-6,
    alpha: float = 1.6,
) -> QpSolution:
    """Solve the QP to the stated KKT tolerance.

    Raises QpInfeasible when the feasible set is empty and QpMaxIterations
    when the tolerance cannot be certified within the iteration cap.
    """
    n = inst.dim

    # objective scaling: the iteration runs on (H, f)/s_obj, duals are
    # rescaled before the (unscaled) KKT residual is certified
    s_obj = max(
        1.0,
        float(np.abs(inst.H).max()) if inst.H.size else 1.0,
        float(np.abs(inst.f).max()) if inst.f.size else 1.0,
    )

    # --- eliminate equality constraints -----------------------------------
    if inst.beq.size:
        x_part, *_ = np.linalg.lstsq(inst.Aeq, inst.beq, rcond=None)
        if np.abs(inst.Aeq @ x_part - inst.beq).max() > 1e-9 * max(
            1.0, np.abs(inst.beq).max()
        ):
            raise QpInfeasible(
                "inconsistent equality constraints",
                certificate={"residual": float(np.abs(inst.Aeq @ x_part - inst.beq).max())},
            )
        Z = sla.null_space(inst.Aeq)
    else:
        x_part = np.zeros(n)
        Z = np.eye(n)

    if Z.shape[1] == 0:
        x = x_part
        if inst.bineq.size and (inst.Aineq @ x - inst.bineq).max() > 1e-9:
            raise QpInfeasible("equalities pin an infeasible point")
        nu = _recover_eq_duals(inst, x, np.zeros(inst.bineq.size))
        mu = np.zeros(inst.bineq.size)
        return QpSolution(x, nu, mu, _kkt_residual(inst, x, nu, mu), 0,
                          objective=float(0.5 * x @ inst.H @ x + inst.f @ x))

    Hr = Z.T @ inst.H @ Z / s_obj
    fr = Z.T @ (inst.H @ x_part + inst.f) / s_obj
    Gr = inst.Aineq @ Z
    hr = inst.bineq - inst.Aineq @ x_part
    m = hr.size

    if m == 0:
        v = np.linalg.solve(Hr + sigma * np.eye(Hr.shape[0]), -fr)
        x = x_part + Z @ v
        # one exact Newton polish (sigma-free)
        try:
            v = np.linalg.solve(Hr, -fr)
            x = x_part + Z @ v
        except np.linalg.LinAlgError:
            pass
        nu = _recover_eq_duals(inst, x, np.zeros(0))
        mu = np.zeros(0)
        return QpSolution(x, nu, mu, _kkt_residual(inst, x, nu, mu), 1,
                          objective=float(0.5 * x @ inst.H @ x + inst.f @ x))

    # badly scaled objectives (penalty-weight QPs) routinely defeat the
    # splitting iteration with degenerate near-LP geometry; the interior
    # point path is both faster and more accurate there, so it goes first
    pre_best = None
    if s_obj > 1e3:
        ipm = _ipm_solve(inst)
        if ipm is not None:
            x_i, nu_i, mu_i = ipm
            pre_best = (x_i, nu_i, mu_i, _kkt_residual(inst, x_i, nu_i, mu_i))
            if pre_best[3] > kkt_tol:
                scale_h = max(1.0, np.abs(inst.bineq).max())
                mu_scale = max(1.0, np.abs(mu_i).max()) if mu_i.size else 1.0
                act = list(
                    np.where(
                        (inst.bineq - inst.Aineq @ x_i < 1e-7 * scale_h)
                        | (mu_i > 1e-7 * mu_scale)
                    )[0]
                )
                pol = _polish(inst, act, kkt_tol, s_obj)
                if pol is not None and pol[3] < pre_best[3]:
                    pre_best = pol
            if pre_best[3] <= kkt_tol:
                x_p, nu_p, mu_p, res_p = pre_best
                return QpSolution(
                    x=x_p, duals_eq=nu_p, duals_ineq=mu_p, kkt_residual=res_p,
                    iterations=0,
                    objective=float(0.5 * x_p @ inst.H @ x_p + inst.f @ x_p),
                )

    # --- ADMM on the reduced problem ---------------------------------------
    nr = Hr.shape[0]
    K = np.block([[Hr + sigma * np.eye(nr), Gr.T], [Gr, -np.eye(m) / rho]])
    lu, piv = sla.lu_factor(K)

    v = np.zeros(nr)
    z = np.zeros(m)  # slack estimate, kept <= hr
    y = np.zeros(m)  # dual estimate for Gr v <= hr
    scale = max(1.0, np.abs(fr).max(), np.abs(hr).max() if m else 1.0)
    eps_admm = 1e-10 * scale
    act_tol = 1e-6 * max(1.0, np.abs(hr).max())
    it = 0
    stalled = False
    prev_res = np.inf
    # hand hard instances to the interior-point fallback rather than grinding
    budget = min(max_iter, 300 if pre_best is not None else 4000)
    for it in range(1, budget + 1):
        rhs = np.concatenate([sigma * v - fr, z - y / rho])
        sol = sla.lu_solve((lu, piv), rhs)
        v_tilde = sol[:nr]
        z_tilde = z + (sol[nr:] - y) / rho
        v = alpha * v_tilde + (1 - alpha) * v
        z_prev = z
        z = np.minimum(alpha * z_tilde + (1 - alpha) * z_prev + y / rho, hr)
        y = y + rho * (alpha * z_tilde + (1 - alpha) * z_prev - z)
        if it % 25 == 0 or it == budget:
            r_prim = np.abs(Gr @ v - z).max() if m else 0.0
            r_dual = np.abs(Hr @ v + fr + Gr.T @ y).max()
            res = max(r_prim, r_dual)
            if res < eps_admm:
                break
            if it % 250 == 0:
                # the polish is an exact active-set solve; attempt an early
                # exit as soon as the iteration has identified the active set
                guess = list(np.where((hr - Gr @ v < act_tol) | (y > act_tol))[0])
                early = _polish(inst, guess, kkt_tol, s_obj)
                if early is not None and early[3] <= kkt_tol:
                    x_p, nu_p, mu_p, res_p = early
                    return QpSolution(
                        x=x_p, duals_eq=nu_p, duals_ineq=mu_p,
                        kkt_residual=res_p, iterations=it,
                        objective=float(0.5 * x_p @ inst.H @ x_p + inst.f @ x_p),
                    )
            if it % 500 == 0:
                if res > 0.999 * prev_res and res > 1e-4 * scale:
                    stalled = True
                    break
                prev_res = res

    if stalled:
        cert = _feasibility_certificate(inst)
        if cert is not None:
            raise QpInfeasible("infeasible QP", certificate=cert)

    # --- polish ------------------------------------------------------------
    x = x_part + Z @ v
    mu = np.maximum(y, 0.0) * s_obj
    nu = _recover_eq_duals(inst, x, mu)
    best = (x, nu, mu, _kkt_residual(inst, x, nu, mu))

    slack = hr - Gr @ v
    active = list(np.where((slack < act_tol) | (y > act_tol))[0])
    polished = _polish(inst, active, kkt_tol, s_obj)
    if polished is not None and polished[3] <= best[3]:
        best = polished
    if pre_best is not None and pre_best[3] < best[3]:
        best = pre_best

    if best[3] > kkt_tol and pre_best is None:
        ipm = _ipm_solve(inst)
        if ipm is not None:
            x_i, nu_i, mu_i = ipm
            cand = (x_i, nu_i, mu_i, _kkt_residual(inst, x_i, nu_i, mu_i))
            if cand[3] < best[3]:
                best = cand
            scale_h = max(1.0, np.abs(inst.bineq).max()) if inst.bineq.size else 1.0
            mu_scale = max(1.0, np.abs(mu_i).max()) if mu_i.size else 1.0
            act = list(
                np.where(
                    (inst.bineq - inst.Aineq @ x_i < 1e-7 * scale_h)
                    | (mu_i > 1e-7 * mu_scale)
                )[0]
            )
            pol = _polish(inst, act, kkt_tol, s_obj)
            if pol is not None and pol[3] < best[3]:
                best = pol

    if best[3] > kkt_tol:
        tr = _trust_region_solve(inst)
        if tr is not None:
            x_t, nu_t, mu_t = tr
            cand = (x_t, nu_t, mu_t, _kkt_residual(inst, x_t, nu_t, mu_t))
            if cand[3] < best[3]:
                best = cand

    x, nu, mu, res = best
    if res > kkt_tol:
        cert = _feasibility_certificate(inst)
        if cert is not None:
            raise QpInfeasible("infeasible QP", certificate=cert)
        raise QpMaxIterations(
            f"KKT residual {res:.3e} > {kkt_tol:.1e} after {it} iterations"
        )
    return QpSolution(
        x=x,
        duals_eq=nu,
        duals_ineq=mu,
        kkt_residual=res,
        iterations=it,
        objective=float(0.5 * x @ inst.H @ x + inst.f @ x),
    )


def _recover_eq_duals(inst: QpInstance, x, mu):
    if inst.beq.size == 0:
        return np.zeros(0)
    rhs = -(inst.H @ x + inst.f + inst.Aineq.T @ mu)
    nu, *_ = np.linalg.lstsq(inst.Aeq.T, rhs, rcond=None)
    return nu
