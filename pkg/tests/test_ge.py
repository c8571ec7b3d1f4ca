"""Solution oracles, KKT residuals, and regularity checks for structured
generalized equations."""

import numpy as np
import pytest

import feskit as fk
from feskit.ge import NonConvergence
from feskit.operators import Box, NonnegOrthant, Polyhedron, SetValuedOp


def _toy_ge(dim=1):
    return fk.GeProblem(
        dim_z=dim, dim_s=dim,
        g_map=lambda z, s: z - s,
        a_op=SetValuedOp(kind="zero"),
        q_map=lambda z: z,
    )


# ---------------------------------------------------------------------------
# fixed-point oracle


def test_solve_oracle_converges_on_contraction():
    oracle = fk.SolutionOracle(
        problem=_toy_ge(),
        condensed_map=lambda z, w: 0.5 * z + np.atleast_1d(w),
    )
    z = oracle.solve(np.array([1.0]), np.array([10.0]))
    assert z[0] == pytest.approx(2.0, abs=1e-9)


def test_solve_oracle_reports_last_iterate_on_nonconvergence():
    oracle = fk.SolutionOracle(
        problem=_toy_ge(),
        condensed_map=lambda z, w: z + 1.0,
        max_iter=10,
    )
    with pytest.raises(NonConvergence) as exc:
        oracle.solve(np.zeros(1), np.zeros(1))
    assert exc.value.z_last is not None
    assert exc.value.z_last[0] == pytest.approx(10.0)
    assert exc.value.residual == pytest.approx(1.0)


def test_solve_oracle_rejects_nonfinite_start_and_iterates():
    oracle = fk.SolutionOracle(
        problem=_toy_ge(), condensed_map=lambda z, w: z * 1e200,
    )
    with pytest.raises(ValueError):
        oracle.solve(np.zeros(1), np.array([np.nan]))
    with pytest.raises(NonConvergence):
        oracle.solve(np.zeros(1), np.ones(1))


def test_oracle_validation():
    with pytest.raises(ValueError):
        fk.SolutionOracle(problem=_toy_ge(), condensed_map=lambda z, w: z, tol=0.0)
    with pytest.raises(ValueError):
        fk.GeProblem(dim_z=0, dim_s=1, g_map=None,
                     a_op=SetValuedOp(kind="zero"), q_map=None)


def test_set_valued_op_validates_skew_part():
    with pytest.raises(Exception):
        SetValuedOp(kind="skew_plus_cones", skew=np.eye(2))
    ok = SetValuedOp(kind="skew_plus_cones", skew=[[0.0, 1.0], [-1.0, 0.0]])
    assert ok.kind == "skew_plus_cones"


# ---------------------------------------------------------------------------
# one-sided penalty


def test_hinge_penalty_value_and_subgradient():
    pen = fk.HingePenalty(weight=4.0, lower=[1.0], upper=[2.0], indices=(0,))
    assert pen.value([0.0]) == pytest.approx(2.0)   # (w/2) * (1 - 0)
    assert pen.value([1.5]) == 0.0
    assert pen.value([3.0]) == pytest.approx(2.0)
    lo, hi = pen.subgradient_interval([0.0])
    assert lo[0] == hi[0] == -2.0
    lo, hi = pen.subgradient_interval([3.0])
    assert lo[0] == hi[0] == 2.0
    lo, hi = pen.subgradient_interval([1.5])
    assert lo[0] == hi[0] == 0.0
    lo, hi = pen.subgradient_interval([1.0])    # lower kink
    assert (lo[0], hi[0]) == (-2.0, 0.0)
    lo, hi = pen.subgradient_interval([2.0])    # upper kink
    assert (lo[0], hi[0]) == (0.0, 2.0)


# ---------------------------------------------------------------------------
# KKT residual and second-order sufficiency


def _lq_nlp(r_weight=1.0):
    return fk.KktNlpProblem(
        dim_xi=1, dim_u=1,
        phi=lambda xi, u: 0.5 * (float(xi @ xi) + r_weight * float(u @ u)),
        grad_phi=lambda xi, u: (np.asarray(xi, float),
                                r_weight * np.asarray(u, float)),
        hess_phi=lambda xi, u: (np.eye(1), np.zeros((1, 1)),
                                r_weight * np.eye(1)),
        u_set=Box(lower=[-100.0], upper=[100.0]),
        h_sensitivity=lambda u, w=None: np.array([[2.0]]),
    )


def test_kkt_residual_zero_at_solution():
    # min 0.5 (xi^2 + u^2) s.t. xi = 2u + w: u* = -2w/5, lambda* = xi*
    nlp = _lq_nlp()
    w = 1.0
    u = -2.0 * w / 5.0
    xi = 2.0 * u + w
    z = np.array([xi, u, xi])
    assert nlp.kkt_residual(z, None, h_value=np.array([xi])) <= 1e-12
    z_bad = np.array([xi, u + 0.5, xi])
    assert nlp.kkt_residual(z_bad, None, h_value=np.array([xi])) > 0.1


def test_kkt_residual_needs_a_steady_output():
    nlp = _lq_nlp()
    with pytest.raises(ValueError):
        nlp.kkt_residual(np.zeros(3), None)


def test_ssosc_positive_and_negative_cases():
    # reduced Hessian along xi = 2u is 4 Q + R
    pd, piv = fk.ssosc_check(_lq_nlp(), np.zeros(3), None)
    assert pd and piv == pytest.approx(5.0)
    pd, piv = fk.ssosc_check(_lq_nlp(r_weight=-5.0), np.zeros(3), None)
    assert not pd and piv == pytest.approx(-1.0)


def test_ssosc_rejects_non_kkt_point_when_validated():
    nlp = _lq_nlp()
    with pytest.raises(ValueError, match="not a KKT point"):
        fk.ssosc_check(nlp, np.array([5.0, 5.0, 0.0]), None,
                       h_value=np.array([0.0]))


# ---------------------------------------------------------------------------
# game assembly and constraint qualification


def _tiny_game(local_set):
    return fk.GameProblem(
        n_agents=1, local_dims=(1,),
        partial_gradients=(lambda u, s: np.array([u[0] - 1.0]),),
        local_sets=(local_set,),
        coupling_A=np.zeros((0, 1)), coupling_b=np.zeros(0),
        mu_tilde=1.0, ell_tilde=1.0, ell=1.0,
    )


def test_licq_inactive_and_degenerate():
    game = _tiny_game(Box(lower=[0.0], upper=[1.0]))
    full, active = fk.licq_check(game, np.array([0.5]))
    assert full and active.size == 0
    # duplicated rows active at the same point are linearly dependent
    dup = _tiny_game(Polyhedron(B=[[1.0], [1.0]], b=[1.0, 1.0],
                                feasible_point=[0.0]))
    full, active = fk.licq_check(dup, np.array([1.0]))
    assert not full and active.size == 2
    with pytest.raises(ValueError, match="infeasible"):
        fk.licq_check(game, np.array([2.0]))


def test_assemble_game_ge_structure():
    _, game, params = fk.build_supply_chain(seed=7)
    ge = fk.assemble_game_ge(game)
    n, m = game.dim_u, game.n_coupling
    assert ge.dim_z == n + m
    K = ge.a_op.skew
    np.testing.assert_allclose(K, -K.T, atol=1e-12)
    np.testing.assert_allclose(K[:n, n:], game.coupling_A.T)
    z = np.arange(1.0, n + m + 1.0)
    np.testing.assert_array_equal(ge.q_map(z), z[:n])
    g = ge.g_map(z, np.zeros(2 * n))  # s is the 2n-dimensional measurement
    assert g.size == n + m
    np.testing.assert_array_equal(g[n:], game.coupling_b)


def test_game_validation():
    with pytest.raises(ValueError):
        fk.GameProblem(
            n_agents=1, local_dims=(1,),
            partial_gradients=(lambda u, s: u,),
            local_sets=(Box(lower=[0.0], upper=[1.0]),),
            coupling_A=np.zeros((0, 1)), coupling_b=np.zeros(0),
            mu_tilde=2.0, ell_tilde=1.0, ell=1.0,  # mu > ell
        )
