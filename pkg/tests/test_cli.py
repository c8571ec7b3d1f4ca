"""End-to-end command-line behavior: artifacts, exit codes, manifests."""

import hashlib
import json

import numpy as np
import pytest

try:
    import tomllib
except ImportError:                                    # Python < 3.11
    import tomli as tomllib

from feskit import cli
from feskit.scenarios import default_config, dumps_config, scenario_from_config


@pytest.fixture
def siso_config(tmp_path):
    path = tmp_path / "siso.toml"
    path.write_text(dumps_config(default_config("siso")))
    return path


def test_init_prints_a_valid_config(capsys):
    assert cli.main(["init", "supply_chain"]) == 0
    text = capsys.readouterr().out
    cfg = tomllib.loads(text)
    assert scenario_from_config(cfg).name == "supply_chain"


def test_run_writes_all_artifacts(siso_config, tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["run", str(siso_config), "--out", str(out)]) == 0
    for name in ("trace.csv", "dense.csv", "summary.json", "certificate.json",
                 "config.toml", "manifest.json"):
        assert (out / name).exists(), name

    summary = json.loads((out / "summary.json").read_text())
    assert summary["schema"] == "feskit-summary/1"
    assert summary["passed"] is True
    assert summary["report"]["converged"] is True

    cert = json.loads((out / "certificate.json").read_text())
    assert cert["mode"] == "analytic" and cert["condition_holds"] is True

    # manifest hash covers exactly the emitted config file
    manifest = json.loads((out / "manifest.json").read_text())
    digest = hashlib.sha256((out / "config.toml").read_bytes()).hexdigest()
    assert manifest["config_sha256"] == digest
    assert sorted(manifest["files"]) == manifest["files"]
    assert "manifest.json" in manifest["files"]

    # the emitted config reproduces the run exactly
    assert tomllib.loads((out / "config.toml").read_text()) == tomllib.loads(
        siso_config.read_text()
    )

    # trace.csv columns match the recorded header
    header = (out / "trace.csv").read_text().splitlines()[0].split(",")
    data = np.loadtxt(out / "trace.csv", delimiter=",", skiprows=1)
    assert data.shape[1] == len(header)


def test_run_rejects_bad_config_without_output(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text('[scenario]\nkind = "siso"\n[scenario.params]\ngamma = -1.0\n')
    out = tmp_path / "out"
    assert cli.main(["run", str(bad), "--out", str(out)]) == 2
    assert not out.exists()
    assert "config error" in capsys.readouterr().err


def test_run_missing_config_is_a_config_error(tmp_path, capsys):
    assert cli.main(["run", str(tmp_path / "nope.toml"), "--out",
                     str(tmp_path / "o")]) == 2


def test_failed_expectation_exits_3(tmp_path, capsys):
    # a vanishing schedule on a flat (zero-slope) ramp converges, so the
    # growing-lag expectation cannot hold
    cfg = default_config("siso")
    cfg["scenario"]["params"].update(
        {"schedule": "vanishing", "disturbance": "ramp", "ramp_slope": 0.0}
    )
    path = tmp_path / "flat.toml"
    path.write_text(dumps_config(cfg))
    out = tmp_path / "out"
    assert cli.main(["run", str(path), "--out", str(out)]) == 3
    summary = json.loads((out / "summary.json").read_text())
    assert summary["passed"] is False


def test_numerical_fault_exits_4(siso_config, tmp_path, monkeypatch):
    import feskit as fk
    from feskit.plant import PlantModel

    def unstable_scenario(cfg):
        plant = PlantModel(
            dim_x=1, dim_u=1, dim_y=1, dim_w=1,
            f=lambda x, u, w: 5.0 * x, g=lambda x, w: x,
            p=lambda u, w: np.zeros(1), h=lambda u, w: np.zeros(1),
            h_sensitivity=lambda u, w: np.zeros((1, 1)),
        )
        ctrl = fk.ProxGradController(
            gamma=0.5, y_ref=0.0, box=fk.Box(lower=[-1.0], upper=[1.0])
        )
        return fk.Scenario(
            name="unstable", plant=plant, controller=ctrl,
            disturbance=fk.constant_disturbance(0.0),
            loop_config=fk.LoopConfig(tau=1.0, horizon=50.0, x0=np.array([1.0])),
            config=tomllib.loads(siso_config.read_text()),
        )

    monkeypatch.setattr(cli, "scenario_from_config", unstable_scenario)
    out = tmp_path / "out"
    assert cli.main(["run", str(siso_config), "--out", str(out)]) == 4
    summary = json.loads((out / "summary.json").read_text())
    assert summary["report"]["blow_up"] is True


def test_seed_and_substeps_overrides(siso_config, tmp_path):
    out = tmp_path / "out"
    assert cli.main(
        ["run", str(siso_config), "--out", str(out), "--substeps", "7"]
    ) == 0
    cfg = tomllib.loads((out / "config.toml").read_text())
    assert cfg["scenario"]["params"]["substeps"] == 7
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["substeps"] == 7


def test_sweep_runs_grid_and_collects_summaries(siso_config, tmp_path):
    out = tmp_path / "sweep"
    code = cli.main(
        ["sweep", str(siso_config), "--out", str(out),
         "--param", "tau", "--values", "0.5", "8"]
    )
    assert code == 0
    payload = json.loads((out / "sweep.json").read_text())
    assert payload["param"] == "tau"
    by_value = {run["value"]: run for run in payload["runs"]}
    assert by_value[0.5]["diverged"] is True
    assert by_value[8]["converged"] is True
    assert (out / "tau=0.5" / "trace.csv").exists()
    assert (out / "tau=8" / "summary.json").exists()


def test_sweep_validates_every_point_before_writing(siso_config, tmp_path):
    out = tmp_path / "sweep"
    code = cli.main(
        ["sweep", str(siso_config), "--out", str(out),
         "--param", "gamma", "--values", "0.5", "-3"]
    )
    assert code == 2
    assert not out.exists()


def test_certify_writes_optional_artifact(siso_config, tmp_path, capsys):
    out = tmp_path / "cert"
    assert cli.main(["certify", str(siso_config), "--out", str(out)]) == 0
    printed = json.loads(capsys.readouterr().out)
    on_disk = json.loads((out / "certificate.json").read_text())
    assert printed == on_disk
    assert printed["schema"] == "feskit-certificate/1"
    assert abs(printed["tau_bar"] - 5.44) <= 0.15


def test_certify_empirical_mode_for_uncertified_controllers(tmp_path, capsys):
    path = tmp_path / "sc.toml"
    path.write_text(dumps_config(default_config("supply_chain")))
    assert cli.main(["certify", str(path)]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["mode"] == "empirical-only"
    assert "lyapunov" in payload


def test_json_safe_strips_nonfinite_values():
    payload = cli._json_safe(
        {"a": np.float64(np.nan), "b": np.inf, "c": np.array([1.0, 2.0]),
         "d": np.int64(3), "e": np.bool_(True)}
    )
    assert payload == {"a": None, "b": None, "c": [1.0, 2.0], "d": 3, "e": True}
    json.dumps(payload, allow_nan=False)
