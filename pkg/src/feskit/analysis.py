"""Stability certificates for the plant-controller interconnection.

The linear-rate small-gain condition

    c1 * L_V * exp(-2 a5 tau) / (1 - exp(-a5 tau)) < 1

with  c1 = L_q L_T L_g sqrt(a4/a3) (1 + L_z lmax(P)/((1-eta) sqrt(lmin(P))))

certifies closed-loop stability for all sampling periods above the unique
threshold tau_bar where the left side crosses 1.  The module also provides
merit-decrease monitoring of recorded traces and seeded empirical
Lipschitz/gain estimation for constants without analytic expressions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "StabilityCertificate",
    "small_gain_lhs",
    "small_gain_threshold",
    "merit_monitor",
    "GainEstimate",
    "estimate_gain",
    "lipschitz_v_quadratic",
]


def small_gain_lhs(tau, c1, L_V, alpha5):
    """Left side of the linear-rate small-gain condition (must be < 1)."""
    if tau <= 0:
        return math.inf
    e = math.exp(-alpha5 * tau)
    return c1 * L_V * e * e / (1.0 - e)


def small_gain_threshold(c1, L_V, alpha5, tol=1e-10):
    """Unique tau_bar with small_gain_lhs(tau_bar) = 1, by bisection.

    The expression is strictly decreasing in tau, diverges as tau -> 0, and
    vanishes as tau -> inf, so the crossing exists whenever c1 L_V > 0.
    """
    if alpha5 <= 0:
        raise ValueError("alpha5 must be positive")
    if c1 < 0 or L_V < 0:
        raise ValueError("gains must be nonnegative")
    if c1 * L_V == 0.0:
        return 0.0
    lo = tol
    hi = 1.0
    while small_gain_lhs(hi, c1, L_V, alpha5) >= 1.0:
        hi *= 2.0
        if hi > 1e12:
            raise ValueError("threshold bracket expansion failed")
    while small_gain_lhs(lo, c1, L_V, alpha5) <= 1.0:
        lo *= 0.5
        if lo < 1e-300:
            return 0.0
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if small_gain_lhs(mid, c1, L_V, alpha5) > 1.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def lipschitz_v_quadratic(P, direction, radius):
    """Input-Lipschitz constant of the quadratic storage V = 0.5 |x - p|_P^2
    over the region |x - p| <= radius, when the steady state moves along
    ``direction`` per unit input: |V(u+) - V(u)| <= |P d| radius |u+ - u|.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    d = np.atleast_1d(np.asarray(direction, dtype=float))
    return float(np.linalg.norm(P @ d) * radius)


@dataclass(frozen=True)
class StabilityCertificate:
    """All constants of the linear-rate small-gain certificate.

    ``empirical`` lists the names of constants that are seeded sup-ratio
    estimates (lower bounds of the true values) rather than analytic.
    """

    P: np.ndarray
    alpha3: float
    alpha4: float
    alpha5: float
    L_V: float
    L_z: float
    L_T: float
    L_g: float
    L_q: float
    eta: float
    lambda_min_alg: float       # algorithm metric extremes (P_alg)
    lambda_max_alg: float
    c1: float
    tau_bar: float
    empirical: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "P", np.atleast_2d(np.asarray(self.P, float)))
        object.__setattr__(self, "empirical", tuple(self.empirical))
        if not 0.0 < self.eta < 1.0:
            raise ValueError("linear algorithm rate requires eta in (0, 1)")
        if abs(self.c1 - self.compose_c1()) > 1e-12 * max(1.0, abs(self.c1)):
            raise ValueError("stored c1 is not recomputable from its parts")

    def compose_c1(self) -> float:
        return (
            self.L_q * self.L_T * self.L_g
            * math.sqrt(self.alpha4 / self.alpha3)
            * (1.0 + self.L_z * self.lambda_max_alg
               / ((1.0 - self.eta) * math.sqrt(self.lambda_min_alg)))
        )

    def condition_holds(self, tau) -> bool:
        return small_gain_lhs(tau, self.c1, self.L_V, self.alpha5) < 1.0

    def to_dict(self):
        return {
            "P": self.P.tolist(),
            "alpha3": self.alpha3,
            "alpha4": self.alpha4,
            "alpha5": self.alpha5,
            "L_V": self.L_V,
            "L_z": self.L_z,
            "L_T": self.L_T,
            "L_g": self.L_g,
            "L_q": self.L_q,
            "eta": self.eta,
            "lambda_min_alg": self.lambda_min_alg,
            "lambda_max_alg": self.lambda_max_alg,
            "c1": self.c1,
            "tau_bar": self.tau_bar,
            "empirical": list(self.empirical),
        }


def build_certificate(lyap, L_V, L_z, L_T, L_g, L_q, eta,
                      lambda_min_alg=1.0, lambda_max_alg=1.0,
                      empirical=()) -> StabilityCertificate:
    """Assemble the certificate from a Lyapunov solve and the Lipschitz data,
    computing c1 and the sampling-period threshold."""
    if not 0.0 < eta < 1.0:
        raise ValueError("linear algorithm rate requires eta in (0, 1)")
    c1 = (
        L_q * L_T * L_g * math.sqrt(lyap.alpha4 / lyap.alpha3)
        * (1.0 + L_z * lambda_max_alg / ((1.0 - eta) * math.sqrt(lambda_min_alg)))
    )
    tau_bar = small_gain_threshold(c1, L_V, lyap.alpha5)
    return StabilityCertificate(
        P=lyap.P, alpha3=lyap.alpha3, alpha4=lyap.alpha4, alpha5=lyap.alpha5,
        L_V=L_V, L_z=L_z, L_T=L_T, L_g=L_g, L_q=L_q, eta=eta,
        lambda_min_alg=lambda_min_alg, lambda_max_alg=lambda_max_alg,
        c1=c1, tau_bar=tau_bar, empirical=empirical,
    )


__all__.append("build_certificate")


def merit_monitor(trace, slack=1e-10, v_threshold=math.inf):
    """Samples where the merit increased although the plant was near steady
    state (V below threshold) -- the regime where decrease is guaranteed.

    Returns the list of indices k with W^{k+1} > W^k + slack and
    V^k <= v_threshold.
    """
    W, V = trace.W, trace.V
    out = []
    for k in range(len(W) - 1):
        if not (np.isfinite(W[k]) and np.isfinite(W[k + 1])):
            continue
        v_ok = (not np.isfinite(V[k])) or V[k] <= v_threshold
        if v_ok and W[k + 1] > W[k] + slack:
            out.append(k)
    return out


@dataclass(frozen=True)
class GainEstimate:
    value: float
    num_probes: int
    argmax_input: np.ndarray = field(repr=False, default=None)
    label: str = "empirical sup-ratio (lower bound)"


def estimate_gain(fn, center, radius, num_probes=200, seed=0) -> GainEstimate:
    """Seeded sup-ratio Lipschitz estimate of ``fn`` around ``center``.

    Probes are drawn as a deterministic stream, so increasing num_probes
    extends the sample set and the estimate is monotone in the probe count.
    The result is a lower bound of the true constant.
    """
    center = np.atleast_1d(np.asarray(center, dtype=float))
    n = center.size
    rng = np.random.default_rng(seed)
    best = 0.0
    arg = None
    for _ in range(num_probes):
        a = center + radius * rng.uniform(-1.0, 1.0, n)
        b = center + radius * rng.uniform(-1.0, 1.0, n)
        dist = np.linalg.norm(a - b)
        if dist < 1e-12:
            continue
        fa = np.atleast_1d(np.asarray(fn(a), dtype=float))
        fb = np.atleast_1d(np.asarray(fn(b), dtype=float))
        ratio = float(np.linalg.norm(fa - fb) / dist)
        if ratio > best:
            best = ratio
            arg = a
    return GainEstimate(value=best, num_probes=num_probes, argmax_input=arg)
