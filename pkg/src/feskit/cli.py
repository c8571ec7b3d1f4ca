"""Command-line front end: run, sweep, and certify packaged scenarios.

Exit codes: 0 success, 2 configuration error, 3 expected-outcome check
failure, 4 numerical fault (controller fault or plant blow-up).
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import math
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .scenarios import (
    ConfigError,
    Scenario,
    default_config,
    dumps_config,
    load_config,
    scenario_from_config,
)

__all__ = ["main"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CHECKS = 3
EXIT_NUMERICAL = 4


def _json_safe(obj):
    """Recursively convert numpy/NaN/inf values into strict-JSON types."""
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _write_json(path: Path, payload: dict):
    path.write_text(json.dumps(_json_safe(payload), indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header, rows):
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    np.savetxt(path, rows, fmt="%.17g", delimiter=",",
               header=",".join(header), comments="")


def _certificate_payload(scenario: Scenario) -> dict:
    if scenario.certificate is not None:
        return {
            "schema": "feskit-certificate/1",
            "mode": "analytic",
            "scenario": scenario.name,
            "tau": scenario.loop_config.tau,
            "condition_holds": scenario.certificate.condition_holds(
                scenario.loop_config.tau
            ),
            **scenario.certificate.to_dict(),
        }
    payload = {
        "schema": "feskit-certificate/1",
        "mode": "empirical-only",
        "scenario": scenario.name,
        "tau": scenario.loop_config.tau,
        "note": "no analytic linear-rate constants available for this "
                "controller; stability is supported by recorded traces only",
    }
    if scenario.lyap is not None:
        payload["lyapunov"] = {
            "P": scenario.lyap.P,
            "alpha3": scenario.lyap.alpha3,
            "alpha4": scenario.lyap.alpha4,
            "alpha5": scenario.lyap.alpha5,
        }
    return payload


def _manifest_payload(cfg: dict, scenario: Scenario, files) -> dict:
    canonical = dumps_config(cfg)
    params = cfg["scenario"].get("params", {})
    return {
        "schema": "feskit-manifest/1",
        "scenario": cfg["scenario"]["kind"],
        "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
        "seed": params.get("seed"),
        "substeps": params.get("substeps"),
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "version": __version__,
        "files": sorted(files),
    }


def _execute_and_write(cfg: dict, out_dir: Path):
    """Run one configured scenario, write all artifacts, return exit code."""
    scenario = scenario_from_config(cfg)
    result = scenario.execute()
    out_dir.mkdir(parents=True, exist_ok=True)

    files = ["trace.csv", "dense.csv", "summary.json", "certificate.json",
             "config.toml"]
    _write_csv(out_dir / "trace.csv", result.trace.column_header(),
               result.trace.rows())
    _write_csv(out_dir / "dense.csv", result.trace.dense_header(),
               result.trace.dense_rows())
    if result.baseline_trace is not None:
        _write_csv(out_dir / "baseline_trace.csv",
                   result.baseline_trace.column_header(),
                   result.baseline_trace.rows())
        files.append("baseline_trace.csv")

    summary = {
        "schema": "feskit-summary/1",
        "scenario": scenario.name,
        "tau": scenario.loop_config.tau,
        "horizon": scenario.loop_config.horizon,
        "report": result.report,
        "integrals": result.integrals,
        "checks": result.checks,
        "passed": result.passed,
    }
    if result.baseline_report is not None:
        summary["baseline_report"] = result.baseline_report
        summary["baseline_integrals"] = result.baseline_integrals
    _write_json(out_dir / "summary.json", summary)
    _write_json(out_dir / "certificate.json", _certificate_payload(scenario))
    (out_dir / "config.toml").write_text(dumps_config(cfg))
    manifest = _manifest_payload(cfg, scenario, files + ["manifest.json"])
    _write_json(out_dir / "manifest.json", manifest)

    if result.report.get("fault") is not None or result.report.get("blow_up"):
        return EXIT_NUMERICAL
    if not result.passed:
        return EXIT_CHECKS
    return EXIT_OK


def _apply_overrides(cfg: dict, args) -> dict:
    cfg = json.loads(json.dumps(cfg))  # deep copy of plain scalars
    params = cfg["scenario"].setdefault("params", {})
    if getattr(args, "seed", None) is not None:
        params["seed"] = args.seed
    if getattr(args, "substeps", None) is not None:
        params["substeps"] = args.substeps
    return cfg


def _load(args) -> dict:
    if args.config == "-":
        raise ConfigError("reading config from stdin is not supported")
    return load_config(args.config)


def _cmd_run(args) -> int:
    cfg = _apply_overrides(_load(args), args)
    # validate fully before creating any output
    scenario_from_config(cfg)
    return _execute_and_write(cfg, Path(args.out))


def _sweep_worker(payload):
    cfg, out_dir, value = payload
    code = _execute_and_write(cfg, Path(out_dir))
    summary = json.loads((Path(out_dir) / "summary.json").read_text())
    return value, code, summary["checks"], summary["report"]


def _cmd_sweep(args) -> int:
    base = _apply_overrides(_load(args), args)
    values = []
    for v in args.values:
        try:
            values.append(json.loads(v))
        except json.JSONDecodeError:
            values.append(v)
    configs = []
    for v in values:
        cfg = json.loads(json.dumps(base))
        cfg["scenario"].setdefault("params", {})[args.param] = v
        scenario_from_config(cfg)  # validate before any output
        configs.append(cfg)

    out = Path(args.out)
    jobs = [
        (cfg, str(out / f"{args.param}={v}"), v) for cfg, v in zip(configs, values)
    ]
    workers = max(1, int(os.environ.get("FESKIT_THREADS", "1")))
    if workers > 1 and len(jobs) > 1:
        with concurrent.futures.ProcessPoolExecutor(
            max_workers=min(workers, len(jobs))
        ) as pool:
            results = list(pool.map(_sweep_worker, jobs))
    else:
        results = [_sweep_worker(j) for j in jobs]

    out.mkdir(parents=True, exist_ok=True)
    _write_json(
        out / "sweep.json",
        {
            "schema": "feskit-sweep/1",
            "param": args.param,
            "values": values,
            "runs": [
                {"value": v, "exit_code": code, "checks": checks,
                 "converged": rep.get("converged"),
                 "diverged": rep.get("diverged")}
                for v, code, checks, rep in results
            ],
        },
    )
    codes = [code for _, code, _, _ in results]
    if EXIT_NUMERICAL in codes:
        return EXIT_NUMERICAL
    if EXIT_CHECKS in codes:
        return EXIT_CHECKS
    return EXIT_OK


def _cmd_certify(args) -> int:
    cfg = _apply_overrides(_load(args), args)
    scenario = scenario_from_config(cfg)
    payload = _certificate_payload(scenario)
    text = json.dumps(_json_safe(payload), indent=2, sort_keys=True)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "certificate.json").write_text(text + "\n")
    print(text)
    return EXIT_OK


def _cmd_init(args) -> int:
    print(dumps_config(default_config(args.kind)), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="feskit",
        description="Closed-loop equilibrium-seeking scenario runner",
    )
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario and write its artifacts")
    run.add_argument("config", help="scenario TOML file")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--substeps", type=int, default=None)
    run.set_defaults(fn=_cmd_run)

    sweep = sub.add_parser("sweep", help="run a scenario over a parameter grid")
    sweep.add_argument("config")
    sweep.add_argument("--out", required=True)
    sweep.add_argument("--param", required=True)
    sweep.add_argument("--values", nargs="+", required=True)
    sweep.add_argument("--seed", type=int, default=None)
    sweep.add_argument("--substeps", type=int, default=None)
    sweep.set_defaults(fn=_cmd_sweep)

    cert = sub.add_parser("certify", help="emit the stability certificate")
    cert.add_argument("config")
    cert.add_argument("--out", default=None)
    cert.add_argument("--seed", type=int, default=None)
    cert.add_argument("--substeps", type=int, default=None)
    cert.set_defaults(fn=_cmd_certify)

    init = sub.add_parser("init", help="print a default scenario config")
    init.add_argument("kind", choices=["siso", "supply_chain", "building"])
    init.set_defaults(fn=_cmd_init)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
