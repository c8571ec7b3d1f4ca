"""Structured generalized equations 0 in G(z,s) + A(z), their parameterized
solution oracles, and numerical regularity checks (second-order sufficiency
and constraint qualification).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .operators import Box, NonnegOrthant, Polyhedron, ProductSet, SetValuedOp

__all__ = [
    "GeProblem",
    "SolutionOracle",
    "NonConvergence",
    "KktNlpProblem",
    "HingePenalty",
    "GameProblem",
    "solve_oracle",
    "ssosc_check",
    "licq_check",
    "assemble_game_ge",
]


class NonConvergence(Exception):
    """Fixed-point iteration did not reach tolerance; the start point may lie
    outside the basin of the tracked solution branch."""

    def __init__(self, message, z_last=None, residual=None):
        super().__init__(message)
        self.z_last = z_last
        self.residual = residual


@dataclass(frozen=True)
class GeProblem:
    """0 in G(z,s) + A(z) with output map u = q(z)."""

    dim_z: int
    dim_s: int
    g_map: callable                 # (z, s) -> R^{dim_z}
    a_op: SetValuedOp
    q_map: callable                 # z -> u
    lipschitz_q: float = 1.0
    jacobian_z: callable = None     # (z, s) -> dim_z x dim_z
    jacobian_s: callable = None     # (z, s) -> dim_z x dim_s

    def __post_init__(self):
        if self.dim_z <= 0 or self.dim_s <= 0:
            raise ValueError("dimensions must be positive")


@dataclass(frozen=True)
class SolutionOracle:
    """Fixed-point oracle for the condensed map T(z, w).

    ``condensed_map`` folds the plant's steady-state model into the
    algorithm update, so iterating it from a start point converges to the
    solution branch selected by that start point.
    """

    problem: GeProblem
    condensed_map: callable         # (z, w) -> R^{dim_z}
    tol: float = 1e-10
    max_iter: int = 100_000

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")

    def solve(self, w, z0):
        return solve_oracle(self, w, z0)


def solve_oracle(oracle: SolutionOracle, w, z0):
    """Iterate the condensed map to a fixed point.

    Returns z* with |T(z*, w) - z*| <= tol, or raises NonConvergence after
    max_iter steps.  Deterministic for fixed inputs.
    """
    z = np.atleast_1d(np.asarray(z0, dtype=float))
    if not np.all(np.isfinite(z)):
        raise ValueError("z0 must be finite")
    for _ in range(oracle.max_iter):
        z_next = np.atleast_1d(oracle.condensed_map(z, w))
        if not np.all(np.isfinite(z_next)):
            raise NonConvergence("iterate became non-finite", z_last=z)
        if np.linalg.norm(z_next - z) <= oracle.tol:
            return z_next
        z = z_next
    resid = float(np.linalg.norm(np.atleast_1d(oracle.condensed_map(z, w)) - z))
    raise NonConvergence(
        f"no fixed point within {oracle.max_iter} iterations (residual {resid:.3e})",
        z_last=z,
        residual=resid,
    )


# ---------------------------------------------------------------------------
# KKT systems of constrained programs


@dataclass(frozen=True)
class HingePenalty:
    """Weighted one-sided penalty  (weight/2) * sum_i max(0, lo_i - x_i, x_i - hi_i),
    applied to the components listed in ``indices`` of the argument."""

    weight: float
    lower: np.ndarray
    upper: np.ndarray
    indices: tuple

    def __post_init__(self):
        object.__setattr__(self, "lower", np.atleast_1d(np.asarray(self.lower, float)))
        object.__setattr__(self, "upper", np.atleast_1d(np.asarray(self.upper, float)))
        object.__setattr__(self, "indices", tuple(self.indices))

    def value(self, xi):
        x = np.asarray(xi, dtype=float)[list(self.indices)]
        v = np.maximum(0.0, np.maximum(self.lower - x, x - self.upper))
        return 0.5 * self.weight * float(v.sum())

    def subgradient_interval(self, xi):
        """Per-component subdifferential [lo, hi] of the penalty at xi."""
        x = np.asarray(xi, dtype=float)
        lo = np.zeros(x.size)
        hi = np.zeros(x.size)
        w = 0.5 * self.weight
        for j, i in enumerate(self.indices):
            if x[i] < self.lower[j]:
                lo[i] = hi[i] = -w
            elif x[i] > self.upper[j]:
                lo[i] = hi[i] = w
            elif x[i] == self.lower[j]:
                lo[i], hi[i] = -w, 0.0
            elif x[i] == self.upper[j]:
                lo[i], hi[i] = 0.0, w
        return lo, hi


@dataclass(frozen=True)
class KktNlpProblem:
    """Data of the program  min phi(xi, u) + varphi(xi)  s.t.  xi = h(u, w), u in U.

    The KKT system in z = (xi, u, lambda) is the generalized equation used
    by the Newton-type controller; ``varphi`` is either None (smooth case)
    or a HingePenalty.
    """

    dim_xi: int
    dim_u: int
    phi: callable                   # (xi, u) -> float
    grad_phi: callable              # (xi, u) -> (g_xi, g_u)
    hess_phi: callable              # (xi, u) -> (Q, S, R) blocks, PSD approximations
    u_set: object                   # Box or Polyhedron
    h_sensitivity: callable         # (u, w) -> dim_xi x dim_u
    varphi: HingePenalty = None

    @property
    def dim_z(self) -> int:
        return 2 * self.dim_xi + self.dim_u  # (xi, u, lambda)

    def split(self, z):
        z = np.asarray(z, dtype=float)
        nxi, nu = self.dim_xi, self.dim_u
        return z[:nxi], z[nxi : nxi + nu], z[nxi + nu :]

    def kkt_residual(self, z, w, s=None, h_value=None):
        """Infinity-norm residual of the KKT system at z.

        ``h_value`` is the steady-state output h(u, w) (or the measurement
        standing in for it); it is required because this object carries the
        sensitivity but not h itself.
        """
        xi, u, lam = self.split(z)
        if h_value is None:
            if s is None:
                raise ValueError("need h_value or s")
            h_value = np.asarray(s, dtype=float)
        g_xi, g_u = self.grad_phi(xi, u)
        # stationarity in xi:  0 in grad_xi phi - lambda + subgrad varphi(xi),
        # i.e. lambda - grad_xi phi must hit the subgradient interval [lo, hi]
        t = lam - g_xi
        if self.varphi is not None:
            lo, hi = self.varphi.subgradient_interval(xi)
        else:
            lo = hi = np.zeros(t.size)
        r_xi = np.maximum(0.0, np.maximum(lo - t, t - hi))
        H = self.h_sensitivity(u, w)
        r_u_vec = g_u + H.T @ lam
        # stationarity in u modulo the normal cone of U: measure by projection
        from .operators import project

        r_u = np.abs(u - project(self.u_set, u - r_u_vec)).max()
        r_lam = np.abs(h_value - xi).max()
        return float(max(np.abs(r_xi).max() if r_xi.size else 0.0, r_u, r_lam))


def ssosc_check(nlp: KktNlpProblem, z_bar, w, pivot_tol=1e-10, kkt_tol=1e-6,
                h_value=None):
    """Second-order sufficiency at a KKT point.

    Builds the nullspace basis Z = [grad_u h; I] of [I  -grad_u h] and runs a
    pivoted-free symmetric (Cholesky-style) elimination of Z' H_L Z, where
    H_L = [[Q, S'], [S, R]] is the Lagrangian Hessian in (xi, u).  Returns
    (positive_definite, smallest_pivot).
    """
    z_bar = np.asarray(z_bar, dtype=float)
    if h_value is not None:
        resid = nlp.kkt_residual(z_bar, w, h_value=h_value)
        if resid > kkt_tol:
            raise ValueError(f"not a KKT point (residual {resid:.3e})")
    xi, u, _ = nlp.split(z_bar)
    Q, S, R = nlp.hess_phi(xi, u)
    Q = np.atleast_2d(np.asarray(Q, float))
    S = np.asarray(S, float).reshape(nlp.dim_u, nlp.dim_xi)
    R = np.atleast_2d(np.asarray(R, float))
    Hl = np.block([[Q, S.T], [S, R]])
    Hsens = nlp.h_sensitivity(u, w)
    Z = np.vstack([Hsens, np.eye(nlp.dim_u)])
    M = Z.T @ Hl @ Z
    M = 0.5 * (M + M.T)
    return _cholesky_pivots(M, pivot_tol)


def _cholesky_pivots(M, pivot_tol):
    """Sequential symmetric elimination; returns (all pivots > tol, min pivot)."""
    M = np.array(M, dtype=float)
    n = M.shape[0]
    if n == 0:
        return True, np.inf
    smallest = np.inf
    for k in range(n):
        piv = M[k, k]
        smallest = min(smallest, piv)
        if piv <= pivot_tol:
            return False, float(smallest)
        M[k + 1 :, k + 1 :] -= np.outer(M[k + 1 :, k], M[k + 1 :, k]) / piv
    return True, float(smallest)


# ---------------------------------------------------------------------------
# Generalized Nash games


@dataclass(frozen=True)
class GameProblem:
    """N-agent game with polyhedral local sets and affine coupling Au <= b."""

    n_agents: int
    local_dims: tuple
    partial_gradients: tuple        # F_i(u, s) -> R^{n_i}; u is the full profile
    local_sets: tuple               # Box or Polyhedron per agent
    coupling_A: np.ndarray          # m x n_u  (m may be 0)
    coupling_b: np.ndarray
    mu_tilde: float
    ell_tilde: float
    ell: float

    def __post_init__(self):
        dims = tuple(int(d) for d in self.local_dims)
        object.__setattr__(self, "local_dims", dims)
        object.__setattr__(self, "partial_gradients", tuple(self.partial_gradients))
        object.__setattr__(self, "local_sets", tuple(self.local_sets))
        n_u = sum(dims)
        A = np.asarray(self.coupling_A, dtype=float).reshape(-1, n_u)
        b = np.atleast_1d(np.asarray(self.coupling_b, dtype=float)) if np.size(
            self.coupling_b
        ) else np.zeros(0)
        object.__setattr__(self, "coupling_A", A)
        object.__setattr__(self, "coupling_b", b)
        if len(dims) != self.n_agents or len(self.partial_gradients) != self.n_agents:
            raise ValueError("per-agent data length mismatch")
        if A.shape[0] != b.size:
            raise ValueError("coupling dimension mismatch")
        if not (0 < self.mu_tilde <= self.ell_tilde):
            raise ValueError("need 0 < mu_tilde <= ell_tilde")

    @property
    def dim_u(self) -> int:
        return sum(self.local_dims)

    @property
    def n_coupling(self) -> int:
        return self.coupling_b.size

    def split_actions(self, u):
        u = np.asarray(u, dtype=float)
        out, k = [], 0
        for d in self.local_dims:
            out.append(u[k : k + d])
            k += d
        return out

    def pseudo_gradient(self, u, s):
        """Stacked partial gradients in agent order."""
        return np.concatenate(
            [np.atleast_1d(F(np.asarray(u, float), s)) for F in self.partial_gradients]
        )

    def stacked_constraints(self):
        """Rows of [A; B_1; ...; B_N] acting on the full profile, with rhs."""
        rows = [self.coupling_A] if self.n_coupling else []
        rhs = [self.coupling_b] if self.n_coupling else []
        offset = 0
        for cset, d in zip(self.local_sets, self.local_dims):
            blk = np.zeros((0, self.dim_u))
            r = np.zeros(0)
            if isinstance(cset, Polyhedron):
                blk = np.zeros((cset.B.shape[0], self.dim_u))
                blk[:, offset : offset + d] = cset.B
                r = cset.b
            elif isinstance(cset, Box):
                fin_up = np.isfinite(cset.upper)
                fin_lo = np.isfinite(cset.lower)
                n_rows = int(fin_up.sum() + fin_lo.sum())
                blk = np.zeros((n_rows, self.dim_u))
                r = np.zeros(n_rows)
                row = 0
                for j in range(d):
                    if fin_up[j]:
                        blk[row, offset + j] = 1.0
                        r[row] = cset.upper[j]
                        row += 1
                    if fin_lo[j]:
                        blk[row, offset + j] = -1.0
                        r[row] = -cset.lower[j]
                        row += 1
            else:
                raise TypeError(f"unsupported local set {type(cset)!r}")
            rows.append(blk)
            rhs.append(r)
            offset += d
        if not rows:
            return np.zeros((0, self.dim_u)), np.zeros(0)
        return np.vstack(rows), np.concatenate(rhs)


def licq_check(game: GameProblem, u_bar, active_tol=1e-8, rank_tol=1e-8):
    """Linear independence of the active constraint gradients at u_bar.

    Returns (full_row_rank, active_row_indices).  rank_tol is relative to
    the largest singular value of the active block.
    """
    u_bar = np.asarray(u_bar, dtype=float)
    A_tilde, b_tilde = game.stacked_constraints()
    vals = A_tilde @ u_bar
    if np.any(vals > b_tilde + active_tol):
        raise ValueError("u_bar is infeasible beyond active_tol")
    active = np.where(vals >= b_tilde - active_tol)[0]
    if active.size == 0:
        return True, active
    blk = A_tilde[active]
    sv = np.linalg.svd(blk, compute_uv=False)
    full_rank = sv.size == active.size and sv[-1] > rank_tol * sv[0]
    return bool(full_rank), active


def assemble_game_ge(game: GameProblem, dim_s: int = None) -> GeProblem:
    """Cast the coupled KKT system of the game as a structured GE in
    z = (u, lambda): G(z,s) = (F(u,s), b) and A(z) the skew coupling block
    plus the normal cones of U and the nonnegative orthant.
    """
    n_u, m = game.dim_u, game.n_coupling
    A = game.coupling_A

    K = np.zeros((n_u + m, n_u + m))
    if m:
        K[:n_u, n_u:] = A.T
        K[n_u:, :n_u] = -A
    blocks = list(game.local_sets) + ([NonnegOrthant(m)] if m else [])
    a_op = SetValuedOp(kind="skew_plus_cones", cset=ProductSet(tuple(blocks)), skew=K)

    def g_map(z, s):
        u = z[:n_u]
        return np.concatenate([game.pseudo_gradient(u, s), game.coupling_b])

    def q_map(z):
        return np.asarray(z, dtype=float)[:n_u]

    return GeProblem(
        dim_z=n_u + m,
        dim_s=dim_s if dim_s is not None else n_u,
        g_map=g_map,
        a_op=a_op,
        q_map=q_map,
    )
