"""Set-valued operator toolkit: projections, resolvents, and empirical
nonexpansiveness probes.

Constraint sets are immutable descriptors; every operation here is a pure
function of its arguments, so everything in this module is thread-safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Box",
    "NonnegOrthant",
    "Polyhedron",
    "ZeroSet",
    "ProductSet",
    "SetValuedOp",
    "project",
    "FbsMetric",
    "resolvent_fbs",
    "SqneResult",
    "sqne_probe",
]


class SetDescriptorError(ValueError):
    """Raised when a constraint-set descriptor is inconsistent or empty."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned box {x : lower <= x <= upper}."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if lo.shape != hi.shape:
            raise SetDescriptorError("box bound shapes differ")
        if np.any(lo > hi):
            raise SetDescriptorError("box has lower > upper")

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, x, tol=1e-9) -> bool:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))


@dataclass(frozen=True)
class NonnegOrthant:
    """The cone {x : x >= 0}."""

    dim: int

    def contains(self, x, tol=1e-9) -> bool:
        return bool(np.all(np.asarray(x) >= -tol))


@dataclass(frozen=True)
class Polyhedron:
    """Polyhedron {x : B x <= b}, certified nonempty by a stored feasible point."""

    B: np.ndarray
    b: np.ndarray
    feasible_point: np.ndarray

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        x0 = np.atleast_1d(np.asarray(self.feasible_point, dtype=float))
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "feasible_point", x0)
        if B.shape[0] != b.size or B.shape[1] != x0.size:
            raise SetDescriptorError("polyhedron dimension mismatch")
        if np.any(B @ x0 > b + 1e-9):
            raise SetDescriptorError("stored feasible point violates B x <= b")

    @property
    def dim(self) -> int:
        return self.B.shape[1]

    def contains(self, x, tol=1e-9) -> bool:
        return bool(np.all(self.B @ np.asarray(x, dtype=float) <= self.b + tol))


@dataclass(frozen=True)
class ZeroSet:
    """Placeholder for the zero operator (no constraint, A(z) = {0})."""

    dim: int

    def contains(self, x, tol=1e-9) -> bool:
        return True


@dataclass(frozen=True)
class ProductSet:
    """Cartesian product of block sets, projected blockwise."""

    blocks: tuple

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))

    @property
    def dim(self) -> int:
        return sum(_block_dim(s) for s in self.blocks)

    def split(self, x):
        x = np.asarray(x, dtype=float)
        out, k = [], 0
        for s in self.blocks:
            d = _block_dim(s)
            out.append(x[k : k + d])
            k += d
        return out

    def contains(self, x, tol=1e-9) -> bool:
        return all(s.contains(part, tol) for s, part in zip(self.blocks, self.split(x)))


def _block_dim(s) -> int:
    if isinstance(s, Box):
        return s.dim
    if isinstance(s, (NonnegOrthant, ZeroSet)):
        return s.dim
    if isinstance(s, Polyhedron):
        return s.dim
    if isinstance(s, ProductSet):
        return s.dim
    raise TypeError(f"unknown set descriptor {type(s)!r}")


def project(cset, x):
    """Euclidean projection of x onto the given set descriptor.

    Boxes and orthants are clamped in closed form; polyhedra go through the
    strictly convex projection QP.  Idempotent to machine precision.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if isinstance(cset, Box):
        return np.clip(x, cset.lower, cset.upper)
    if isinstance(cset, NonnegOrthant):
        return np.maximum(x, 0.0)
    if isinstance(cset, ZeroSet):
        return x.copy()
    if isinstance(cset, ProductSet):
        return np.concatenate(
            [project(s, part) for s, part in zip(cset.blocks, cset.split(x))]
        )
    if isinstance(cset, Polyhedron):
        if cset.contains(x):
            return x.copy()
        from . import qp  # deferred: qp does not depend on operators

        n = cset.dim
        inst = qp.QpInstance(
            H=np.eye(n), f=-x, Aineq=cset.B, bineq=cset.b
        )
        sol = qp.solve_qp(inst)
        return sol.x
    raise TypeError(f"cannot project onto {type(cset)!r}")


# ---------------------------------------------------------------------------
# Generalized-equation operator descriptor


@dataclass(frozen=True)
class SetValuedOp:
    """The set-valued part A(z) of a structured generalized equation.

    kind:
      'normal_cone'      -- A(z) = N_C(z) for the stored set
      'skew_plus_cones'  -- A(z) = K z + N_C(z) with K skew-symmetric
                            (the game KKT structure)
      'zero'             -- A(z) = {0}
    """

    kind: str
    cset: object = None
    skew: np.ndarray = None

    def __post_init__(self):
        if self.kind not in ("normal_cone", "skew_plus_cones", "zero"):
            raise SetDescriptorError(f"unknown operator kind {self.kind!r}")
        if self.kind == "skew_plus_cones":
            K = np.asarray(self.skew, dtype=float)
            if not np.allclose(K, -K.T, atol=1e-12):
                raise SetDescriptorError("skew part is not skew-symmetric")
            object.__setattr__(self, "skew", K)


# ---------------------------------------------------------------------------
# Semi-decentralized FBS resolvent


@dataclass(frozen=True)
class FbsMetric:
    """Preconditioner Phi = [[diag(1/gamma_i), -A^T], [-A, I/gamma_c]].

    Positive definiteness is certified once at construction via a Cholesky
    factorization; the violating pivot index is reported on failure.
    """

    gammas: np.ndarray          # one step size per scalar action component
    gamma_c: float
    A: np.ndarray               # coupling matrix, m x n_u (m may be 0)

    def __post_init__(self):
        g = np.atleast_1d(np.asarray(self.gammas, dtype=float))
        A = np.asarray(self.A, dtype=float).reshape(-1, g.size)
        object.__setattr__(self, "gammas", g)
        object.__setattr__(self, "A", A)
        if np.any(g <= 0) or self.gamma_c <= 0:
            raise SetDescriptorError("step sizes must be positive")
        # manual Cholesky so the failing pivot can be reported
        M = self.matrix()
        n = M.shape[0]
        for k in range(n):
            if M[k, k] <= 0:
                raise SetDescriptorError(
                    f"preconditioner not positive definite: pivot {k} = {M[k, k]:.3e}"
                )
            M[k + 1 :, k + 1 :] -= np.outer(M[k + 1 :, k], M[k + 1 :, k]) / M[k, k]

    def matrix(self) -> np.ndarray:
        m = self.A.shape[0]
        n = self.gammas.size
        Phi = np.zeros((n + m, n + m))
        Phi[:n, :n] = np.diag(1.0 / self.gammas)
        if m:
            Phi[:n, n:] = -self.A.T
            Phi[n:, :n] = -self.A
            Phi[n:, n:] = np.eye(m) / self.gamma_c
        return Phi

    def norm(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(math.sqrt(max(z @ (self.matrix() @ z), 0.0)))


def resolvent_fbs(action_set, metric: FbsMetric, v):
    """Blockwise resolvent (id + Phi^{-1} A)^{-1} v for the game operator
    A(z) = [[0, A^T], [-A, 0]] z + N_{U x R^m_+}(z).

    With the semi-decentralized preconditioner the resolvent is explicit:
    the action block is a projection onto U, the multiplier block an
    orthant projection using the already-updated actions.
    """
    n = metric.gammas.size
    m = metric.A.shape[0]
    v = np.asarray(v, dtype=float)
    if v.size != n + m:
        raise ValueError("resolvent input has wrong dimension")
    v_u, v_lam = v[:n], v[n:]
    u_plus = project(action_set, v_u - metric.gammas * (metric.A.T @ v_lam))
    lam_plus = np.maximum(v_lam + metric.gamma_c * (metric.A @ (2.0 * u_plus - v_u)), 0.0)
    return np.concatenate([u_plus, lam_plus])


# ---------------------------------------------------------------------------
# Empirical strong quasi-nonexpansiveness


@dataclass(frozen=True)
class SqneResult:
    rho: float                  # largest rho >= 0 satisfied by all samples
    passed: bool
    samples: int
    worst_sample: np.ndarray = field(repr=False, default=None)


def sqne_probe(T, z_star, P=None, samples=200, radius=1.0, seed=0) -> SqneResult:
    """Sampling falsifier for strong quasi-nonexpansiveness of a map T.

    Checks |T(z)-z*|_P^2 <= |z-z*|_P^2 - rho |T(z)-z|_P^2 over random points
    in the ball of the given radius around z*, and returns the largest rho
    that every sample satisfies.  rho = 0 means the property was falsified;
    rho = inf means T moved no sampled point (e.g. the identity).
    """
    z_star = np.atleast_1d(np.asarray(z_star, dtype=float))
    n = z_star.size
    if P is None:
        P = np.eye(n)
    P = np.asarray(P, dtype=float)
    resid = np.linalg.norm(np.atleast_1d(T(z_star)) - z_star)
    if resid > 1e-8:
        raise ValueError(f"z_star is not a fixed point (residual {resid:.3e})")

    def pnorm2(v):
        return float(v @ (P @ v))

    rng = np.random.default_rng(seed)
    rho_best = math.inf
    worst = None
    for _ in range(samples):
        d = rng.standard_normal(n)
        d *= radius * rng.uniform() ** (1.0 / n) / np.linalg.norm(d)
        z = z_star + d
        Tz = np.atleast_1d(T(z))
        gain = pnorm2(z - z_star) - pnorm2(Tz - z_star)
        step = pnorm2(Tz - z)
        if step <= 1e-28:
            continue  # fixed residual is zero; every rho passes
        rho_here = gain / step
        if rho_here < rho_best:
            rho_best = rho_here
            worst = z
    if math.isinf(rho_best):
        return SqneResult(rho=math.inf, passed=True, samples=samples)
    rho = max(rho_best, 0.0)
    return SqneResult(rho=rho, passed=rho > 0.0, samples=samples, worst_sample=worst)
