"""Configuration-driven command line runner.

Three subcommands, all reading a single TOML config file:

- ``run``: one simulation; writes snapshots, diagnostics JSON, series CSV
  and SVG plots of area, center-of-mass speed and mode decay.
- ``verify``: one built-in experiment (m2 | m3 | mixed | circle); fits
  mode decay rates, compares them with the dispersion relation, checks
  area and center-of-mass conservation, and writes a machine-readable
  pass/fail report.
- ``bench``: times the schemes over a fixed number of steps of one
  experiment and flags unstable ones (perimeter growth or failure).

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 verification failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import plots
from .errors import (
    ConfigError,
    DeterminantSignError,
    FitError,
    GeometryError,
    MeshQualityError,
    NewtonDivergenceError,
    SimulationFailure,
    SolverFailure,
    TriangleInversionError,
)
from .experiments import EXPERIMENTS
from .fem import FeField
from .geometry import PolarShapeSpec, curve_to_csv, sample_polar_boundary
from .lsa import fit_growth_rate
from .mesh import MeshPolicy, generate_mesh, mesh_to_text
from .schemes import SchemeConfig, run_simulation, run_step
from .solver import FactorReuse

__all__ = ["main", "cmd_run", "cmd_verify", "cmd_bench", "load_config"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_VERIFY = 4

_NUMERICAL_ERRORS = (
    SimulationFailure,
    SolverFailure,
    NewtonDivergenceError,
    DeterminantSignError,
    MeshQualityError,
    TriangleInversionError,
    GeometryError,
)

_RUN_KEYS = {
    "sigma", "dt", "t_end", "scheme", "alpha", "newton_tol", "newton_max_iters",
    "output_stride", "m_max", "seed", "out_dir", "write_snapshots", "shape", "mesh",
}
_SHAPE_KEYS = {"base_radius", "modes"}
_MESH_KEYS = {"boundary_vertex_count", "interior_target_edge", "adaptive",
              "min_angle_deg", "max_area_ratio"}
_VERIFY_KEYS = {"experiment", "scheme", "dt", "t_end", "alpha", "newton_tol",
                "output_stride", "seed", "out_dir", "mesh"}
_BENCH_KEYS = {"experiment", "schemes", "n_steps", "dt", "alpha", "seed", "out_dir",
               "mesh"}


def load_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}") from exc


def _check_keys(table: dict, allowed: set, context: str):
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r} in {context} "
                          f"(allowed: {', '.join(sorted(allowed))})")


def _mesh_policy(table: dict) -> MeshPolicy:
    _check_keys(table, _MESH_KEYS, "the [mesh] table")
    try:
        return MeshPolicy(**table)
    except (GeometryError, TypeError) as exc:
        raise ConfigError(f"invalid mesh policy: {exc}") from exc


def _shape(table: dict) -> PolarShapeSpec:
    _check_keys(table, _SHAPE_KEYS, "the [shape] table")
    modes = tuple(tuple(m) for m in table.get("modes", ()))
    try:
        return PolarShapeSpec(table.get("base_radius", 1.0), modes)
    except GeometryError as exc:
        raise ConfigError(f"invalid shape: {exc}") from exc


def _scheme_config(raw: dict, policy: MeshPolicy) -> SchemeConfig:
    kwargs = {k: raw[k] for k in
              ("sigma", "dt", "t_end", "scheme", "alpha", "newton_tol",
               "newton_max_iters", "output_stride", "m_max") if k in raw}
    try:
        return SchemeConfig(mesh_policy=policy, **kwargs)
    except ConfigError:
        raise
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _config_dict(cfg: SchemeConfig, shape: PolarShapeSpec, seed: int) -> dict:
    return {
        "sigma": cfg.sigma,
        "dt": cfg.dt,
        "t_end": cfg.t_end,
        "scheme": cfg.scheme,
        "alpha": cfg.alpha,
        "newton_tol": cfg.newton_tol,
        "newton_max_iters": cfg.newton_max_iters,
        "output_stride": cfg.output_stride,
        "m_max": cfg.m_max,
        "seed": seed,
        "shape": {
            "base_radius": shape.base_radius,
            "modes": [list(map(float, m)) for m in shape.modes],
        },
        "mesh": {
            "boundary_vertex_count": cfg.mesh_policy.boundary_vertex_count,
            "interior_target_edge": cfg.mesh_policy.interior_target_edge,
            "adaptive": cfg.mesh_policy.adaptive,
            "min_angle_deg": cfg.mesh_policy.min_angle_deg,
            "max_area_ratio": cfg.mesh_policy.max_area_ratio,
        },
    }


def _diagnostics_dict(result, shape: PolarShapeSpec, seed: int) -> dict:
    cfg = result.config
    records = []
    for r in result.diagnostics.records:
        fourier = {"mean": r.fourier_mean}
        for m in range(1, cfg.m_max + 1):
            fourier[f"c{m}"] = r.fourier_cos[m - 1]
            fourier[f"s{m}"] = r.fourier_sin[m - 1]
        records.append({
            "t": r.t, "area": r.area, "perimeter": r.perimeter,
            "u_cm": list(r.u_cm), "fourier": fourier,
        })
    reports = []
    for k, rep in enumerate(result.step_reports, start=1):
        reports.append({
            "step": k,
            "t": k * cfg.dt,
            "scheme": rep.scheme,
            "newton_iterations": rep.newton_iterations,
            "increment_norm": rep.increment_norm,
            "kkt_residual": rep.kkt_residual,
            "perimeter_before": rep.perimeter_before,
            "perimeter_after": rep.perimeter_after,
            "area_before": rep.area_before,
            "area_after": rep.area_after,
            "max_displacement": rep.max_displacement,
            "monotone": rep.monotone,
            "remeshed": rep.remeshed,
            "det_residual": rep.det_residual,
        })
    return {"config": _config_dict(cfg, shape, seed), "records": records,
            "step_reports": reports}


def _write_json(path: Path, payload: dict):
    path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


def _write_series_csv(path: Path, result):
    cfg = result.config
    labels = [f"c{m}" for m in range(1, cfg.m_max + 1)] + \
             [f"s{m}" for m in range(1, cfg.m_max + 1)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "area", "perimeter", "ucm_x", "ucm_y"] + labels)
        for r in result.diagnostics.records:
            w.writerow([repr(r.t), repr(r.area), repr(r.perimeter),
                        repr(r.u_cm[0]), repr(r.u_cm[1])]
                       + [repr(v) for v in r.fourier_cos]
                       + [repr(v) for v in r.fourier_sin])


def _write_field_csv(path: Path, field: FeField):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "value"])
        for i, v in enumerate(np.asarray(field.coeffs)):
            w.writerow([i, repr(float(v))])


def _write_snapshots(out: Path, result):
    snap_dir = out / "snapshots"
    snap_dir.mkdir(parents=True, exist_ok=True)
    for snap in result.snapshots:
        stem = f"t{snap.t:012.8f}".replace(".", "_")
        curve_to_csv(snap.mesh.boundary_curve_view, snap_dir / f"{stem}_boundary.csv")
        (snap_dir / f"{stem}_mesh.txt").write_text(mesh_to_text(snap.mesh))
        if snap.velocity is not None:
            _write_field_csv(snap_dir / f"{stem}_velocity.csv", snap.velocity)
        if snap.pressure is not None:
            _write_field_csv(snap_dir / f"{stem}_pressure.csv", snap.pressure)


def _write_plots(out: Path, result, predictions):
    d = result.diagnostics
    t = d.times
    plots.plot_scalar_series(out / "area.svg", t, d.areas, "area",
                             "droplet area", reference=d.areas[0])
    plots.plot_scalar_series(out / "ucm.svg", t, d.ucm_magnitudes,
                             "|center-of-mass velocity|",
                             "center-of-mass speed")
    series = {}
    for label in predictions or {}:
        series[label] = d.amplitude_series(label)
    if not series:  # plot every mode that starts visibly excited
        for m in range(1, d.m_max + 1):
            for kind in "cs":
                label = f"{kind}{m}"
                tt, amp = d.amplitude_series(label)
                if np.abs(amp[0]) > 1e-6:
                    series[label] = (tt, amp)
    if series:
        plots.plot_mode_decay(out / "modes.svg", series, predictions or {},
                              "mode decay vs dispersion prediction")


def _run_from_config(raw: dict, out_dir: Path, write_snapshots: bool, quiet: bool,
                     predictions=None):
    shape = _shape(raw.get("shape", {}))
    policy = _mesh_policy(raw.get("mesh", {}))
    cfg = _scheme_config(raw, policy)
    seed = int(raw.get("seed", 0))
    result = run_simulation(shape, cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "diagnostics.json", _diagnostics_dict(result, shape, seed))
    _write_series_csv(out_dir / "series.csv", result)
    _write_plots(out_dir, result, predictions)
    if write_snapshots:
        _write_snapshots(out_dir, result)
    if not quiet:
        d = result.diagnostics
        drift = np.max(np.abs(d.areas - d.areas[0])) / d.areas[0]
        print(f"run finished: {len(result.step_reports)} steps, "
              f"area drift {drift:.2e}, artifacts in {out_dir}")
    return result


def cmd_run(config_path, out=None, quiet=False) -> int:
    raw = load_config(config_path)
    _check_keys(raw, _RUN_KEYS, "the run config")
    out_dir = Path(out or raw.get("out_dir", "runs/run"))
    _run_from_config(raw, out_dir, bool(raw.get("write_snapshots", True)), quiet)
    return EXIT_OK


def cmd_verify(config_path, out=None, quiet=False) -> int:
    raw = load_config(config_path)
    _check_keys(raw, _VERIFY_KEYS, "the verify config")
    name = raw.get("experiment")
    if name not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {sorted(EXPERIMENTS)}, "
                          f"got {name!r}")
    exp = EXPERIMENTS[name]
    scheme = raw.get("scheme", "newton")
    run_raw = {
        "sigma": exp.sigma,
        "dt": float(raw.get("dt", exp.dt)),
        "t_end": float(raw.get("t_end", exp.t_end)),
        "scheme": scheme,
        "output_stride": int(raw.get("output_stride", exp.output_stride)),
        "m_max": 6,
        "shape": {
            "base_radius": exp.shape.base_radius,
            "modes": [list(m) for m in exp.shape.modes],
        },
        "mesh": raw.get("mesh", {}),
        "seed": raw.get("seed", 0),
    }
    for key in ("alpha", "newton_tol"):
        if key in raw:
            run_raw[key] = raw[key]
    predictions = exp.predicted_rates()
    out_dir = Path(out or raw.get("out_dir", f"runs/verify_{name}_{scheme}"))
    result = _run_from_config(run_raw, out_dir, False, quiet,
                              predictions=predictions)

    d = result.diagnostics
    fitted, rel_err, residuals = {}, {}, {}
    for label, predicted in predictions.items():
        t, amp = d.amplitude_series(label)
        rate, resid = fit_growth_rate(t, amp)
        fitted[label] = rate
        residuals[label] = resid
        rel_err[label] = abs(rate - predicted) / abs(predicted)
    area_drift = float(np.max(np.abs(d.areas - d.areas[0])) / d.areas[0])
    ucm_max = float(np.max(d.ucm_magnitudes))
    ok = (
        all(err <= exp.rate_rel_tol for err in rel_err.values())
        and area_drift <= exp.area_tol
        and ucm_max <= exp.ucm_tol
    )
    report = {
        "experiment": name,
        "scheme": scheme,
        "fitted": fitted,
        "predicted": predictions,
        "rel_err": rel_err,
        "fit_residuals": residuals,
        "area_drift": area_drift,
        "ucm_max": ucm_max,
        "tolerances": {
            "rate_rel_tol": exp.rate_rel_tol,
            "area_tol": exp.area_tol,
            "ucm_tol": exp.ucm_tol,
        },
        "pass": bool(ok),
    }
    _write_json(out_dir / "verify.json", report)
    if not quiet:
        for label in sorted(fitted):
            print(f"  {label}: fitted {fitted[label]:+.4f} vs predicted "
                  f"{predictions[label]:+.4f} (rel err {rel_err[label]:.2e})")
        print(f"  area drift {area_drift:.2e}, |u_cm| max {ucm_max:.2e}")
        print(f"verify {name}/{scheme}: {'PASS' if ok else 'FAIL'} "
              f"(report in {out_dir / 'verify.json'})")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_bench(config_path, out=None, quiet=False) -> int:
    raw = load_config(config_path)
    _check_keys(raw, _BENCH_KEYS, "the bench config")
    name = raw.get("experiment")
    if name not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {sorted(EXPERIMENTS)}, "
                          f"got {name!r}")
    exp = EXPERIMENTS[name]
    schemes = raw.get("schemes", ["explicit", "newton", "curl", "nonlinear_det"])
    if not isinstance(schemes, list) or not schemes:
        raise ConfigError("schemes must be a non-empty list")
    n_steps = int(raw.get("n_steps", 50))
    dt = float(raw.get("dt", exp.dt))
    policy = _mesh_policy(raw.get("mesh", {}))

    rows = []
    for scheme in schemes:
        cfg = SchemeConfig(sigma=exp.sigma, dt=dt, t_end=n_steps * dt,
                           scheme=scheme, alpha=float(raw.get("alpha", 1e-3)),
                           mesh_policy=policy)
        mesh = generate_mesh(sample_polar_boundary(exp.shape,
                                                   policy.boundary_vertex_count),
                             policy)
        reuse = FactorReuse()
        iters, violation, failure = [], None, None
        t0 = time.perf_counter()
        for step in range(1, n_steps + 1):
            try:
                _, _, mesh, rep = run_step(mesh, cfg, reuse=reuse)
            except Exception as exc:  # inversion, divergence, solver trouble
                failure = f"{type(exc).__name__}: {exc}"
                break
            iters.append(rep.newton_iterations)
            if not rep.monotone and violation is None:
                violation = step
                break  # perimeter growth: scheme flagged unstable, stop early
        wall = time.perf_counter() - t0
        done = len(iters)
        rows.append({
            "scheme": scheme,
            "steps_completed": done,
            "wall_total": wall,
            "wall_per_step": wall / max(done, 1),
            "newton_iters_mean": float(np.mean(iters)) if iters else 0.0,
            "unstable": violation is not None or failure is not None,
            "first_violation_step": violation,
            "failure": failure,
        })
        if not quiet:
            state = "unstable" if rows[-1]["unstable"] else "ok"
            print(f"  {scheme}: {done} steps, "
                  f"{1e3 * rows[-1]['wall_per_step']:.1f} ms/step, {state}")

    out_dir = Path(out or raw.get("out_dir", f"runs/bench_{name}"))
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"experiment": name, "dt": dt, "n_steps_requested": n_steps,
               "rows": rows}
    _write_json(out_dir / "bench.json", payload)
    with open(out_dir / "bench.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scheme", "steps_completed", "wall_total", "wall_per_step",
                    "newton_iters_mean", "unstable", "first_violation_step",
                    "failure"])
        for r in rows:
            w.writerow([r["scheme"], r["steps_completed"], repr(r["wall_total"]),
                        repr(r["wall_per_step"]), repr(r["newton_iters_mean"]),
                        r["unstable"], r["first_violation_step"], r["failure"]])
    plots.plot_bench(out_dir / "bench.svg", rows)
    if not quiet:
        print(f"bench artifacts in {out_dir}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="heleshaw",
        description="Moving-mesh droplet relaxation: run, verify, bench.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in [("run", "run one simulation from a TOML config"),
                           ("verify", "run a built-in experiment and check it"),
                           ("bench", "time the schemes on one experiment")]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config", help="path to the TOML config file")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--quiet", action="store_true", help="suppress progress text")

    args = parser.parse_args(argv)
    command = {"run": cmd_run, "verify": cmd_verify, "bench": cmd_bench}[args.command]
    try:
        return command(args.config, out=args.out, quiet=args.quiet)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FitError as exc:
        print(f"verification error: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
