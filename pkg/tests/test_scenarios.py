"""Scenario packaging: configs, disturbances, and the comparison baseline."""

import numpy as np
import pytest

try:
    import tomllib
except ImportError:                                    # Python < 3.11
    import tomli as tomllib
from hypothesis import given, settings
from hypothesis import strategies as st

import feskit as fk
from feskit.plant import BuildingParams
from feskit.scenarios import (
    ConfigError,
    HysteresisController,
    _occupancy_counts,
    building_weather,
    default_config,
    dumps_config,
    load_config,
    scenario_from_config,
    scenario_siso,
)


# ---------------------------------------------------------------------------
# config round-trips


@pytest.mark.parametrize("kind", ["siso", "supply_chain", "building"])
def test_default_config_round_trips(kind):
    cfg = default_config(kind)
    text = dumps_config(cfg)
    assert tomllib.loads(text) == cfg
    # a config built back from the parsed text describes the same scenario
    rebuilt = scenario_from_config(tomllib.loads(text))
    assert rebuilt.config == cfg


@given(
    tau=st.floats(5.5, 50.0),
    gamma=st.floats(0.05, 1.0),
    horizon=st.floats(100.0, 1000.0),
    substeps=st.integers(1, 40),
)
@settings(max_examples=30, deadline=None)
def test_arbitrary_scalar_params_round_trip(tau, gamma, horizon, substeps):
    cfg = {
        "scenario": {
            "kind": "siso",
            "params": {
                "tau": tau, "gamma": gamma, "horizon": horizon,
                "substeps": substeps, "schedule": "constant",
                "disturbance": "zero", "y_ref": 1.0, "ramp_slope": 0.05,
            },
        }
    }
    sc = scenario_from_config(cfg)
    assert tomllib.loads(dumps_config(sc.config)) == sc.config


def test_config_error_paths():
    with pytest.raises(ConfigError, match="scenario"):
        scenario_from_config({})
    with pytest.raises(ConfigError, match="unknown scenario kind"):
        scenario_from_config({"scenario": {"kind": "pendulum"}})
    with pytest.raises(ConfigError, match="unknown parameters"):
        scenario_from_config(
            {"scenario": {"kind": "siso", "params": {"gain": 0.8}}})
    with pytest.raises(ConfigError, match="scalar"):
        scenario_from_config(
            {"scenario": {"kind": "siso", "params": {"tau": [1.0, 2.0]}}})
    with pytest.raises(ConfigError, match="invalid parameters"):
        scenario_from_config(
            {"scenario": {"kind": "siso", "params": {"gamma": -1.0}}})
    with pytest.raises(ConfigError, match="unknown disturbance"):
        scenario_siso(disturbance="sine")
    with pytest.raises(ConfigError):
        default_config("unknown")


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[scenario\nkind=")
    with pytest.raises(ConfigError, match="invalid TOML"):
        load_config(bad)


def test_dumps_config_rejects_unserializable_values():
    with pytest.raises(ConfigError):
        dumps_config({"scenario": {"kind": object()}})


# ---------------------------------------------------------------------------
# scenario builders


def test_siso_builder_wiring():
    sc = scenario_siso(tau=8.0)
    assert sc.certificate is not None
    assert "regulation-converges" in sc.checks
    assert scenario_siso(tau=0.5).checks.keys() == {"fast-sampling-destabilizes"}
    assert scenario_siso(tau=3.0).checks.keys() == {"no-blow-up"}
    # vanishing schedules carry no linear-rate certificate
    assert scenario_siso(schedule="vanishing").certificate is None
    # ramp default horizon differs from the regulation default
    assert scenario_siso(disturbance="ramp").loop_config.horizon == 184.0
    assert sc.loop_config.horizon == 400.0


def test_supply_chain_builder_wiring():
    sc = fk.scenario_supply_chain()
    assert sc.loop_config.n_samples == 52
    assert set(sc.checks) == {
        "multiplier-idle-pre-surge", "multiplier-active-post-surge",
        "cap-violation-settles", "prices-track-equilibrium",
    }
    assert sc.certificate is None and sc.lyap is not None


# ---------------------------------------------------------------------------
# occupancy and weather


def test_occupancy_is_seeded_and_bounded():
    a = _occupancy_counts(seed=3, n_slots=200, n_rooms=5)
    b = _occupancy_counts(seed=3, n_slots=200, n_rooms=5)
    np.testing.assert_array_equal(a, b)
    c = _occupancy_counts(seed=4, n_slots=200, n_rooms=5)
    assert not np.array_equal(a, c)
    assert np.all(a >= 0)
    assert np.all(a.sum(axis=1) <= 15)
    assert a.sum() > 0  # somebody shows up during office hours


def test_weather_profile_bounds_and_jumps():
    w = building_weather(seed=3, days=1.0)
    ts = np.linspace(0.0, 86400.0, 500)
    vals = np.array([w(t) for t in ts])
    ta, qsol = vals[:, 0], vals[:, 2]
    assert ta.min() >= 8.0 - 1e-9 and ta.max() <= 18.0 + 1e-9
    assert w(0.0)[0] == pytest.approx(8.0)          # coldest at midnight
    assert w(43200.0)[0] == pytest.approx(18.0)     # warmest at noon
    assert np.all(qsol >= 0.0)
    assert w(0.0)[2] == 0.0 and w(43200.0)[2] == pytest.approx(600.0)
    # occupancy changes only at slot boundaries, reported as rate exceptions
    assert np.isinf(w.rate_bound(800.0, 1000.0))
    assert np.isfinite(w.rate_bound(0.0, 800.0))


# ---------------------------------------------------------------------------
# hysteresis baseline


def _measurement(temps, ta=10.0, tg=12.0):
    return np.array([*temps, ta, tg])


def test_hysteresis_switching_logic():
    bp = BuildingParams()
    ctrl = HysteresisController(bp)
    mid = 0.5 * (bp.t_min + bp.t_max)

    # cold rooms: heater and all radiators on
    u = ctrl.step(_measurement([20.0] * 5))
    assert u[1] == bp.u_upper[1]
    assert np.all(u[3:] == bp.u_upper[3:])
    assert u[0] == 0.0                      # fan stays off
    assert u[2] == bp.u_lower[2]            # cooler idle

    # at the midpoint both bands release
    u = ctrl.step(_measurement([mid] * 5))
    assert u[1] == bp.u_lower[1]
    assert np.all(u[3:] == bp.u_lower[3:])

    # hot rooms: cooler on, radiators off
    u = ctrl.step(_measurement([26.0] * 5))
    assert u[2] == bp.u_upper[2]
    assert np.all(u[3:] == bp.u_lower[3:])

    # cooling hysteresis: stays on until the midpoint is reached again
    u = ctrl.step(_measurement([24.0] * 5))
    assert u[2] == bp.u_upper[2]
    u = ctrl.step(_measurement([mid] * 5))
    assert u[2] == bp.u_lower[2]


def test_hysteresis_acts_per_room():
    bp = BuildingParams()
    ctrl = HysteresisController(bp)
    u = ctrl.step(_measurement([20.0, 24.0, 20.0, 24.0, 22.0]))
    assert u[3] == bp.u_upper[3] and u[5] == bp.u_upper[5]
    assert u[4] == bp.u_lower[4] and u[6] == bp.u_lower[6]
    assert u[7] == bp.u_lower[7]            # in the dead zone: unchanged (off)


# ---------------------------------------------------------------------------
# scenario execution plumbing


def test_scenario_result_passed_aggregates_checks():
    r = fk.ScenarioResult(trace=None, report={}, integrals={},
                          checks={"a": True, "b": True})
    assert r.passed
    r.checks["b"] = False
    assert not r.passed


def test_baseline_runs_under_identical_conditions():
    sc = fk.scenario_building(days=0.05, substeps=4)
    result = sc.execute()
    assert result.baseline_trace is not None
    np.testing.assert_array_equal(result.trace.t, result.baseline_trace.t)
    np.testing.assert_array_equal(result.trace.x[0], result.baseline_trace.x[0])
    assert "cost" in result.baseline_integrals
