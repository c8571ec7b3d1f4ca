"""Plant builders, disturbance signals, integration, and Lyapunov solves."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

import feskit as fk
from feskit.plant import NonHurwitz, PlantModel


# ---------------------------------------------------------------------------
# disturbance signals


def test_constant_and_ramp_disturbances():
    c = fk.constant_disturbance([1.0, 2.0])
    np.testing.assert_array_equal(c(5.0), [1.0, 2.0])
    assert c.rate_bound(0.0, 10.0) == 0.0
    r = fk.ramp_disturbance(1.0, 0.05)
    assert r(10.0)[0] == pytest.approx(1.5)
    assert r.rate_bound(0.0, 1.0) == pytest.approx(0.05)


def test_piecewise_constant_jumps_report_infinite_rate():
    w = fk.piecewise_constant_disturbance([0.0, 5.0], [[1.0], [3.0]])
    assert w(4.9)[0] == 1.0
    assert w(5.0)[0] == 3.0
    assert w.rate_bound(0.0, 4.0) == 0.0
    assert math.isinf(w.rate_bound(4.0, 6.0))
    with pytest.raises(ValueError):
        fk.piecewise_constant_disturbance([0.0, 0.0], [[1.0], [2.0]])


def test_surge_disturbance():
    w = fk.surge_disturbance([2.0], 3.0, t_surge=10.0)
    assert w(9.99)[0] == 2.0
    assert w(10.0)[0] == 6.0
    assert math.isinf(w.rate_bound(5.0, 15.0))


def test_table_disturbance_interpolates_with_slope_bound():
    w = fk.table_disturbance([0.0, 1.0, 3.0], [[0.0], [2.0], [2.0]])
    assert w(0.5)[0] == pytest.approx(1.0)
    assert w(2.0)[0] == pytest.approx(2.0)
    assert w.derivative_bound == pytest.approx(2.0)


# ---------------------------------------------------------------------------
# integration


def _lti_exact(A, b_vec, x0, tau):
    n = x0.size
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = A
    aug[:n, n] = b_vec
    return (expm(aug * tau) @ np.array([*x0, 1.0]))[:n]


def test_rk4_matches_matrix_exponential():
    plant = fk.build_siso_plant()
    x0 = np.array([0.5, -0.3])
    u = np.array([0.7])
    w = fk.constant_disturbance(0.3)
    exact = _lti_exact(plant.lti_A, np.array([0.0, 1.0]) * (0.7 + 0.3), x0, 2.0)
    res = fk.integrate_hold(plant, x0, u, w, 0.0, 2.0, 128)
    assert np.linalg.norm(res.x_end - exact) <= 1e-9
    assert not res.diverged
    assert res.ts.size == 129 and res.ts[-1] == pytest.approx(2.0)


def test_rk4_is_fourth_order_on_step_halving():
    plant = fk.build_siso_plant()
    x0 = np.array([1.0, 0.0])
    u = np.array([0.2])
    w = fk.constant_disturbance(0.1)
    exact = _lti_exact(plant.lti_A, np.array([0.0, 1.0]) * 0.3, x0, 3.0)
    errs = [
        np.linalg.norm(fk.integrate_hold(plant, x0, u, w, 0.0, 3.0, s).x_end - exact)
        for s in (3, 6, 12, 24)
    ]
    for coarse, fine in zip(errs, errs[1:]):
        assert coarse / fine >= 12.0


def test_integrate_hold_flags_blow_up():
    unstable = PlantModel(
        dim_x=1, dim_u=1, dim_y=1, dim_w=1,
        f=lambda x, u, w: 5.0 * x, g=lambda x, w: x,
        p=lambda u, w: np.zeros(1), h=lambda u, w: np.zeros(1),
        h_sensitivity=lambda u, w: np.zeros((1, 1)),
    )
    res = fk.integrate_hold(unstable, np.array([1e8]), np.zeros(1),
                            fk.constant_disturbance(0.0), 0.0, 10.0, 100)
    assert res.diverged and res.blowup_time is not None
    assert res.ts.size < 101


def test_integrate_hold_validation():
    plant = fk.build_siso_plant()
    w = fk.constant_disturbance(0.0)
    with pytest.raises(ValueError):
        fk.integrate_hold(plant, np.zeros(2), np.zeros(1), w, 0.0, 1.0, 0)
    with pytest.raises(ValueError):
        fk.integrate_hold(plant, np.zeros(2), np.zeros(1), w, 0.0, -1.0, 4)


# ---------------------------------------------------------------------------
# Lyapunov solve


def test_lyapunov_known_solution():
    data = fk.lti_lyapunov(np.array([[0.0, 1.0], [-1.0, -0.5]]))
    np.testing.assert_allclose(data.P, [[2.25, 0.5], [0.5, 2.0]], atol=1e-9)
    assert data.residual <= 1e-10
    ev = np.linalg.eigvalsh(data.P)
    assert data.alpha3 == pytest.approx(ev[0])
    assert data.alpha4 == pytest.approx(ev[-1])
    assert data.alpha5 == pytest.approx(1.0 / ev[-1])


def test_lyapunov_rejects_unstable_matrix():
    with pytest.raises(NonHurwitz):
        fk.lti_lyapunov(np.array([[1.0]]))


@given(seed=st.integers(0, 200))
@settings(max_examples=25, deadline=None)
def test_lyapunov_random_hurwitz_property(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 5))
    A = -np.eye(n) * rng.uniform(0.5, 2.0) + 0.3 * rng.standard_normal((n, n))
    if np.any(np.linalg.eigvals(A).real >= -1e-6):
        return
    data = fk.lti_lyapunov(A)
    assert data.residual <= 1e-8
    assert np.linalg.eigvalsh(data.P)[0] > 0.0


# ---------------------------------------------------------------------------
# the three study plants


def test_siso_plant_steady_state_consistency():
    plant = fk.build_siso_plant()
    u, w = np.array([0.4]), np.array([-0.2])
    xss = plant.p(u, w)
    np.testing.assert_allclose(plant.f(xss, u, w), 0.0, atol=1e-12)
    np.testing.assert_allclose(plant.h(u, w), plant.g(xss, w))
    assert plant.h(u, w)[0] == pytest.approx(0.2)


def test_supply_chain_draw_is_reproducible_and_well_posed():
    p1 = fk.build_supply_chain(seed=7)[2]
    p2 = fk.build_supply_chain(seed=7)[2]
    np.testing.assert_array_equal(p1.beta, p2.beta)
    np.testing.assert_array_equal(p1.d_base, p2.d_base)
    assert p1.sigma_cap_avg == p2.sigma_cap_avg

    plant, game, params = fk.build_supply_chain(seed=7)
    M = params.pseudo_gradient_matrix
    mu = np.linalg.eigvalsh(0.5 * (M + M.T))[0]
    assert mu > 0 and game.mu_tilde == pytest.approx(mu)
    assert game.ell_tilde == pytest.approx(np.linalg.norm(M, 2))
    # the price cap sits strictly between the unconstrained equilibrium
    # averages before and after the surge
    pre = np.linalg.solve(M, params.d_base + params.beta * params.cost)
    post = np.linalg.solve(
        M, params.surge_factor * params.d_base + params.beta * params.cost
    )
    assert np.mean(pre) < params.sigma_cap_avg < np.mean(post)


def test_supply_chain_steady_state_consistency():
    plant, game, params = fk.build_supply_chain(seed=7)
    u = np.array([4.0, 5.0, 6.0])
    xss = plant.p(u, params.d_base)
    np.testing.assert_allclose(plant.f(xss, u, params.d_base), 0.0, atol=1e-10)
    np.testing.assert_allclose(plant.h(u, params.d_base), plant.g(xss, params.d_base))
    assert np.all(np.linalg.eigvals(plant.lti_A).real < 0)


def test_supply_chain_pseudo_gradient_matches_condensed_matrix():
    plant, game, params = fk.build_supply_chain(seed=7)
    u = np.array([3.0, 7.0, 2.0])
    s = plant.h(u, params.d_base)
    F = game.pseudo_gradient(u, s)
    expected = (params.pseudo_gradient_matrix @ u
                + params.pseudo_gradient_offset(params.d_base))
    np.testing.assert_allclose(F, expected, atol=1e-10)


def test_building_steady_state_and_measurement():
    plant, nlp, bp = fk.build_building()
    u = 0.5 * (bp.u_lower + bp.u_upper)
    w = np.array([5.0, 12.0, 300.0, 1.0, 0.0, 2.0, 0.0, 1.0])
    xss = plant.p(u, w)
    np.testing.assert_allclose(plant.f(xss, u, w), 0.0, atol=1e-10)
    y = plant.h(u, w)
    np.testing.assert_allclose(y[: bp.n_rooms], xss[: bp.n_rooms])
    assert y[bp.n_rooms] == w[0] and y[bp.n_rooms + 1] == w[1]
    # more heat input raises every room temperature
    hotter = u.copy()
    hotter[1] = bp.u_upper[1]
    assert np.all(plant.p(hotter, w)[: bp.n_rooms] > xss[: bp.n_rooms])


def test_building_sensitivity_matches_independent_differences():
    plant, nlp, bp = fk.build_building()
    u = 0.5 * (bp.u_lower + bp.u_upper)
    w = bp.w_nominal
    H = nlp.h_sensitivity(u)
    fd = np.zeros_like(H)
    for k in range(u.size):
        up, um = u.copy(), u.copy()
        up[k] += 1e-4
        um[k] -= 1e-4
        fd[:, k] = (plant.h(up, w) - plant.h(um, w)) / 2e-4
    assert np.abs(H - fd).max() <= 1e-5


def test_building_comfort_penalty_band_is_tightened():
    _, nlp, bp = fk.build_building()
    np.testing.assert_allclose(nlp.varphi.lower, bp.t_min + bp.comfort_backoff)
    np.testing.assert_allclose(nlp.varphi.upper, bp.t_max - bp.comfort_backoff)
    assert nlp.varphi.indices == tuple(range(bp.n_rooms))
