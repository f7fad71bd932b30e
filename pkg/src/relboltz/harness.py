"""
Scenario files, the command line and result persistence.

A scenario is a JSON document validated against ``SCHEMA``; each command
writes CSV grids and JSON summaries into a run directory together with a
manifest listing content hashes, library versions and wall times.
"""
import argparse
import hashlib
import json
import os
import platform
import sys
import time
from contextlib import nullcontext
from importlib import metadata
from pathlib import Path

import jsonschema
import numpy as np
import scipy
import scipy.fft

from . import __version__, kernels
from .errors import ConfigError, RelBoltzError

COMMANDS = ("simulate", "linearize", "probe", "observe", "geodesic", "check-kernel")
FLOAT_FMT = "%.16e"
SCENARIO_DIR = Path(__file__).with_name("scenarios")

_vec = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_box = {"type": "array", "items": _vec, "minItems": 2, "maxItems": 2}
_source = {
    "type": "object",
    "required": ["x", "p", "half_x", "half_p"],
    "properties": {"x": _vec, "p": _vec, "half_x": _vec, "half_p": _vec, "amp": {"type": "number"}},
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "required": ["metric"],
    "properties": {
        "name": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "metric": {
            "type": "object",
            "required": ["kind", "n"],
            "properties": {
                "kind": {"enum": ["Minkowski", "ConformalMinkowski", "DiagonalWarped", "CustomAnalytic"]},
                "n": {"type": "integer", "minimum": 2, "maximum": 6},
                "params": {"type": "object"},
                "chart_box": _box,
            },
            "additionalProperties": False,
        },
        "kernel": {
            "type": "object",
            "required": ["W"],
            "properties": {
                "W": _box,
                "r0": {"type": "number", "exclusiveMinimum": 0},
                "r1": {"type": "number", "exclusiveMinimum": 0},
                "margin": {"type": "number", "exclusiveMinimum": 0},
                "gamma_radii": {"type": "array", "items": {"type": "number", "minimum": 0},
                                "minItems": 2, "maxItems": 2},
                "around_target": {"type": "number", "exclusiveMinimum": 0},
                "n_samples": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "observers": {
            "type": "object",
            "properties": {
                "half_width": {"type": "number", "exclusiveMinimum": 0},
                "count": {"type": "integer", "minimum": 1},
                "a_grid": {"type": "array", "items": _vec},
            },
            "additionalProperties": False,
        },
        "diamond": {
            "type": "object",
            "required": ["s_minus", "s_plus"],
            "properties": {"s_minus": {"type": "number"}, "s_plus": {"type": "number"}},
            "additionalProperties": False,
        },
        "targets": {"type": "array", "items": _vec},
        "sources": {
            "type": "object",
            "properties": {
                "eps": {"type": "number", "exclusiveMinimum": 0},
                "R": {"type": "number", "exclusiveMinimum": 0},
                "delta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.7853981633974483},
                "t_source": {"type": "number"},
                "a_second": _vec,
                "p_scale": {"type": "number", "exclusiveMinimum": 0},
                "section_scale": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "detector": {
            "type": "object",
            "properties": {
                "half_width": {"type": "number", "exclusiveMinimum": 0},
                "points": {"type": "integer", "minimum": 17},
                "kappa": {"type": "number", "exclusiveMinimum": 0},
                "recover": {"type": "boolean"},
                "s_samples": {"type": "integer", "minimum": 17},
                "s_range": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                "directions": {"type": "integer", "minimum": 17},
            },
            "additionalProperties": False,
        },
        "solver": {
            "type": "object",
            "required": ["spatial_axes", "momentum_spacing", "k_ranges"],
            "properties": {
                "spatial_axes": {"type": "array", "items": {
                    "type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}},
                "momentum_spacing": _vec,
                "k_ranges": {"type": "array", "items": {
                    "type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2}},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": {"type": "integer", "minimum": 1},
                "h": {"type": "number", "exclusiveMinimum": 0},
                "ngl": {"type": "integer", "minimum": 1},
                "source_fraction": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "source_f": _source,
        "source_h": _source,
        "linearize": {
            "type": "object",
            "properties": {
                "eps_first": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 2},
                "eps_second": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 2},
            },
            "additionalProperties": False,
        },
        "geodesics": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["x", "p", "T"],
                "properties": {"x": _vec, "p": _vec, "T": {"type": "number", "exclusiveMinimum": 0},
                               "h": {"type": "number", "exclusiveMinimum": 0}},
                "additionalProperties": False,
            },
        },
    },
    "additionalProperties": False,
}


# ---------------------------------------------------------------------------
# configuration

def _pointer(path):
    return "/" + "/".join(str(p) for p in path) if path else ""


def validate_config(cfg):
    """Schema and consistency checks; raises ConfigError pointing at the first bad field."""
    v = jsonschema.Draft202012Validator(SCHEMA)
    errs = sorted(v.iter_errors(cfg), key=lambda e: [str(p) for p in e.absolute_path])
    if errs:
        e = errs[0]
        raise ConfigError(e.message, _pointer(e.absolute_path))
    m = cfg["metric"]
    n = m["n"]
    lo = np.full(n, -10.0)
    hi = np.full(n, 10.0)
    if "chart_box" in m:
        for i, row in enumerate(m["chart_box"]):
            if len(row) != n:
                raise ConfigError(f"expected {n} entries", f"/metric/chart_box/{i}")
        lo, hi = np.array(m["chart_box"][0]), np.array(m["chart_box"][1])
        if np.any(lo >= hi):
            raise ConfigError("chart box must have lo < hi", "/metric/chart_box")

    def inside(x, where, pad=0.0):
        x = np.asarray(x, dtype=float)
        if x.shape != (n,):
            raise ConfigError(f"expected {n} entries", where)
        if np.any(x - pad < lo) or np.any(x + pad > hi):
            raise ConfigError("lies outside the chart box", where)

    d = cfg.get("diamond")
    if d is not None:
        if not d["s_minus"] < d["s_plus"]:
            raise ConfigError("need s_minus < s_plus", "/diamond/s_minus")
        if not (-1 < d["s_minus"] and d["s_plus"] < 1):
            raise ConfigError("diamond tips must lie in (-1, 1)", "/diamond")
    k = cfg.get("kernel")
    if k is not None:
        for i, row in enumerate(k["W"]):
            inside(row, f"/kernel/W/{i}", k.get("margin", 0.2))
        if not np.all(np.array(k["W"][0]) < np.array(k["W"][1])):
            raise ConfigError("kernel box must have lo < hi", "/kernel/W")
        if k.get("r0", 0.2) >= k.get("r1", 0.5):
            raise ConfigError("need r0 < r1", "/kernel/r0")
    for i, w in enumerate(cfg.get("targets", [])):
        inside(w, f"/targets/{i}")
    for i, g in enumerate(cfg.get("geodesics", [])):
        inside(g["x"], f"/geodesics/{i}/x")
        if len(g["p"]) != n:
            raise ConfigError(f"expected {n} entries", f"/geodesics/{i}/p")
    for key in ("source_f", "source_h"):
        s = cfg.get(key)
        if s is not None:
            for field in ("x", "p", "half_x", "half_p"):
                if len(s[field]) != n:
                    raise ConfigError(f"expected {n} entries", f"/{key}/{field}")
            inside(s["x"], f"/{key}/x")
    obs = cfg.get("observers", {})
    for i, a in enumerate(obs.get("a_grid", [])):
        if len(a) != n - 1:
            raise ConfigError(f"expected {n - 1} entries", f"/observers/a_grid/{i}")
    src = cfg.get("sources", {})
    if "a_second" in src and len(src["a_second"]) != n - 1:
        raise ConfigError(f"expected {n - 1} entries", "/sources/a_second")
    sol = cfg.get("solver")
    if sol is not None:
        if len(sol["spatial_axes"]) != n or len(sol["momentum_spacing"]) != n or len(sol["k_ranges"]) != n:
            raise ConfigError(f"expected {n} entries per list", "/solver")
    if d is not None and "observers" in cfg:
        _check_family(cfg)
    return cfg


def _check_family(cfg):
    from .causal_obs import CausalDiamond, check_observer_bounds
    spec = build_metric(cfg)
    try:
        fam = build_family(spec, cfg)
    except ValueError as e:
        raise ConfigError(str(e), "/observers") from None
    d = CausalDiamond(spec, cfg["diamond"]["s_minus"], cfg["diamond"]["s_plus"])
    if not check_observer_bounds(spec, fam, d):
        raise ConfigError("observer curves must start before and end after the diamond tips", "/observers")


def load_config(source):
    """Parsed and validated scenario from a path, a JSON string or a dict."""
    if isinstance(source, dict):
        cfg = json.loads(json.dumps(source))
    else:
        p = Path(source)
        if not p.exists() and (SCENARIO_DIR / p.name).exists():
            p = SCENARIO_DIR / p.name
        try:
            cfg = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON: {e}") from e
    return validate_config(cfg)


def config_hash(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def worker_count():
    """Worker cap from RELBOLTZ_THREADS (default 1)."""
    v = os.environ.get("RELBOLTZ_THREADS", "1")
    try:
        return max(1, int(v))
    except ValueError:
        raise ConfigError(f"RELBOLTZ_THREADS must be an integer, got {v!r}") from None


# ---------------------------------------------------------------------------
# builders

def build_metric(cfg):
    from .spacetime import metric_from_dict
    return metric_from_dict(cfg["metric"])


def build_kernel(spec, cfg, centre=None):
    from .collision import builtin_kernel
    k = cfg["kernel"]
    W = (np.array(k["W"][0]), np.array(k["W"][1]))
    if centre is not None and "around_target" in k:
        W = (centre - k["around_target"], centre + k["around_target"])
    return builtin_kernel(spec, W, k.get("r0", 0.2), k.get("r1", 0.5), k.get("margin", 0.2),
                          tuple(k.get("gamma_radii", (0.5, 3.0))))


def build_source(d):
    from .kinetic_core import bump_source
    return bump_source(np.array(d["x"]), np.array(d["p"]), np.array(d["half_x"]), np.array(d["half_p"]),
                       d.get("amp", 1.0))


def build_family(spec, cfg):
    from .causal_obs import ObserverFamily
    o = cfg.get("observers", {})
    if "a_grid" in o:
        return ObserverFamily(spec, o["a_grid"])
    return ObserverFamily.default(spec, o.get("half_width", 0.5), o.get("count", 33))


def build_grid(cfg):
    from .boltzmann import momentum_lattice_grid
    s = cfg["solver"]
    axes = [np.linspace(a, b, int(c)) for a, b, c in s["spatial_axes"]]
    return momentum_lattice_grid(axes, s["momentum_spacing"], [tuple(r) for r in s["k_ranges"]])


def build_scenario(spec, cfg, w):
    from .probe import ProbeScenario
    s = cfg.get("sources", {})
    d = cfg.get("diamond", {"s_minus": -0.9, "s_plus": 0.9})
    det = cfg.get("detector", {})
    a2 = s.get("a_second", [0.3] * (spec.n - 1))
    return ProbeScenario(spec, np.array(w, dtype=float), np.array(a2, dtype=float), d["s_minus"], d["s_plus"],
                         s.get("t_source"), s.get("delta", 0.05), s.get("p_scale", 1.0),
                         s.get("section_scale", 0.5), s.get("eps", 0.02), s.get("R", 0.2),
                         det.get("half_width", 0.2), det.get("points", 17))


# ---------------------------------------------------------------------------
# output

def _fmt(v):
    return FLOAT_FMT % v


def write_csv(path, header, rows):
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(v) for v in r) + "\n")
    return path


def read_csv(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return header, data


def density_header(n):
    return [f"x{i}" for i in range(n)] + [f"p{i}" for i in range(n)] + ["value"]


def measurement_header(n):
    return [f"x{i}" for i in range(n)] + ["S_value"]


def export_grid(obj, grid, path):
    """CSV of a density on a PhaseGrid or of a Measurement on its detector grid."""
    from .probe import Measurement
    if isinstance(obj, Measurement):
        n = obj.points.shape[-1]
        return write_csv(path, measurement_header(n), obj.rows())
    X, P = grid.points()
    vals = obj(X, P)
    return write_csv(path, density_header(grid.n), np.column_stack([X, P, vals]))


def import_grid(path):
    """Inverse of export_grid: (header, coordinates, values)."""
    header, data = read_csv(path)
    return header, data[:, :-1], data[:, -1]


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not serialisable: {type(o)}")


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default, allow_nan=True)
        fh.write("\n")
    return path


def file_hash(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# commands

def geodesic_header(n):
    return ["s"] + [f"x{i}" for i in range(n)] + [f"p{i}" for i in range(n)] + ["mass_shell"]


def cmd_geodesic(cfg, out, rng):
    from .geodesics import geodesic_flow
    spec = build_metric(cfg)
    files = []
    drift = []
    exited = []
    for i, g in enumerate(cfg.get("geodesics", [])):
        path = geodesic_flow(spec, np.array(g["x"], float), np.array(g["p"], float), g["T"], g.get("h", 1e-2))
        drift.append(path.mass_shell_drift)
        exited.append(bool(path.exited_chart))
        files.append(write_csv(out / f"geodesic_{i}.csv", geodesic_header(spec.n), path.rows()))
    summary = {"count": len(files), "mass_shell_drift": drift, "chart_exit": exited,
               "backend": kernels.backend_name(spec)}
    return files, summary


def cmd_observe(cfg, out, rng):
    from .causal_obs import observation_time_minus, observation_time_plus
    spec = build_metric(cfg)
    n = spec.n
    fam = build_family(spec, cfg)
    a_cols = [f"a{i}" for i in range(n - 1)]
    files = [write_csv(out / "observers.csv", a_cols, fam.a_grid)]
    targets = [np.array(w, float) for w in cfg.get("targets", [])]
    for j, w in enumerate(targets):
        rows = []
        for i in range(len(fam)):
            mu = fam.curve(i)
            fp = observation_time_plus(spec, mu, w)
            fm = observation_time_minus(spec, mu, w)
            rows.append(np.concatenate([fam.a_grid[i], [fp, fm], mu(fp)]))
        header = a_cols + ["f_plus", "f_minus"] + [f"e{k}" for k in range(n)]
        files.append(write_csv(out / f"observations_{j}.csv", header, rows))
    return files, {"observers": len(fam), "targets": len(targets)}


def cmd_check_kernel(cfg, out, rng):
    from .collision import check_admissible
    spec = build_metric(cfg)
    A = build_kernel(spec, cfg)
    report = check_admissible(spec, A, n_samples=cfg["kernel"].get("n_samples", 200), seed=int(rng))
    files = [write_json(out / "kernel_report.json", report)]
    return files, {"passed": bool(report["passed"])}


def _solver_config(cfg, grid, rng, **kw):
    from .boltzmann import SolveConfig
    s = cfg["solver"]
    base = dict(tol=s.get("tol", 1e-12), max_iter=s.get("max_iter", 200), h=s.get("h", 2e-2),
                ngl=s.get("ngl", 3), seed=int(rng))
    base.update(kw)
    return SolveConfig(grid, **base)


def cmd_simulate(cfg, out, rng):
    from .boltzmann import boltzmann_solve, default_max_source_norm, grid_operators
    spec = build_metric(cfg)
    A = build_kernel(spec, cfg)
    grid = build_grid(cfg)
    f = build_source(cfg["source_f"])
    sc = cfg["solver"]
    ops = grid_operators(spec, A, grid, sc.get("h", 2e-2), sc.get("ngl", 3))
    msn = default_max_source_norm(ops, f)
    frac = sc.get("source_fraction")
    if frac is not None:
        f = (frac * msn / f.sup) * f
    res = boltzmann_solve(spec, A, f, _solver_config(cfg, grid, rng, max_source_norm=msn))
    files = [export_grid(res.u, grid, out / "solution.csv")]
    summary = dict(res.diagnostics(), max_source_norm=msn, grid_shape=list(grid.shape))
    files.append(write_json(out / "solve.json", summary))
    return files, summary


def cmd_linearize(cfg, out, rng):
    from .boltzmann import (boltzmann_solve, default_max_source_norm, grid_operators, phi_second_direct,
                            phi_second_polarization)
    spec = build_metric(cfg)
    A = build_kernel(spec, cfg)
    grid = build_grid(cfg)
    sc = cfg["solver"]
    ops = grid_operators(spec, A, grid, sc.get("h", 2e-2), sc.get("ngl", 3))
    f = build_source(cfg["source_f"])
    msn = default_max_source_norm(ops, f)
    lin = cfg.get("linearize", {})
    files = []
    summary = {"max_source_norm": msn}
    eps1 = lin.get("eps_first", [1e-2, 5e-3, 2.5e-3])
    V = ops.vlasov(f)
    solve_cfg = _solver_config(cfg, grid, rng, max_source_norm=msn, tol=1e-16, max_iter=60)
    err = []
    for e in eps1:
        r = boltzmann_solve(spec, A, (e * msn) * f, solve_cfg)
        err.append(float(np.max(np.abs(r.values - e * msn * V))))
    files.append(write_csv(out / "first_order.csv", ["eps", "remainder"], np.column_stack([eps1, err])))
    summary["first_order_slope"] = float(np.polyfit(np.log(eps1), np.log(err), 1)[0])
    if "source_h" in cfg:
        h = build_source(cfg["source_h"])
        fs, hs = msn * f, msn * h
        eps2 = lin.get("eps_second", [2e-2, 1e-2, 5e-3])
        direct = phi_second_direct(spec, A, fs, hs, grid=grid).values
        cfg2 = _solver_config(cfg, grid, rng, max_source_norm=None, tol=1e-18, max_iter=60)
        diff = []
        for e in eps2:
            pol = phi_second_polarization(spec, A, fs, hs, e, cfg2).values
            diff.append(float(np.max(np.abs(pol - direct))))
        files.append(write_csv(out / "second_order.csv", ["eps", "sup_difference"], np.column_stack([eps2, diff])))
        summary["second_order_slope"] = float(np.polyfit(np.log(eps2), np.log(diff), 1)[0])
        summary["direct_sup"] = float(np.max(np.abs(direct)))
    files.append(write_json(out / "linearize.json", summary))
    return files, summary


def cmd_probe(cfg, out, rng):
    from .errors import EmptyDetection
    from .probe import (build_probe_plan, default_probe_kernel, default_recovery_axes, detect_singular_support,
                        measure, predicted_ridge, recover_observation_times, ridge_distance_cells)
    spec = build_metric(cfg)
    det = cfg.get("detector", {})
    kappa = det.get("kappa", 0.5)
    files = []
    results = []
    for j, w in enumerate(cfg.get("targets", [])):
        plan = build_probe_plan(build_scenario(spec, cfg, w))
        if "kernel" in cfg:
            A = build_kernel(spec, cfg, centre=plan.z1)
        else:
            A = default_probe_kernel(spec, plan)
        m = measure(spec, A, plan)
        files.append(export_grid(m, None, out / f"measurement_{j}.csv"))
        try:
            cells = detect_singular_support(m, kappa)
        except EmptyDetection:
            cells = np.zeros((0, 2), dtype=int)
        a, b, normal = predicted_ridge(spec, plan)
        keep = normal < 0.5 * min(plan.spacing)
        entry = {
            "target": list(map(float, w)),
            "z1": plan.z1, "intersection_residual": plan.intersection_residual,
            "transversality": plan.transversality, "e": plan.e,
            "cells": cells, "ridge_samples": np.column_stack([a[keep], b[keep]]),
            "ridge_distance_cells": ridge_distance_cells(spec, plan, cells) if len(cells) else [],
            "loss_max": m.meta["loss_max"], "grid_spacing": list(plan.spacing),
        }
        if det.get("recover", False):
            fam = build_family(spec, cfg)
            s_vals, thetas = default_recovery_axes()
            if "s_range" in det or "s_samples" in det:
                lo, hi = det.get("s_range", [0.28, 1.0])
                s_vals = np.linspace(lo, hi, det.get("s_samples", 25))
            if "directions" in det:
                thetas = 2 * np.pi * np.arange(det["directions"]) / det["directions"]
            rec = recover_observation_times(spec, A, plan, fam, s_vals, thetas, kappa)
            entry["recovery"] = [{"a": r.a, "recovered": r.recovered, "truth": r.truth,
                                  "delta_steps": r.delta_steps} for r in rec]
            entry["recovery_fraction"] = float(np.mean([r.delta_steps <= 2 for r in rec]))
        results.append(entry)
    files.append(write_json(out / "detection.json", {"targets": results}))
    return files, {"targets": len(results)}


HANDLERS = {
    "simulate": cmd_simulate,
    "linearize": cmd_linearize,
    "probe": cmd_probe,
    "observe": cmd_observe,
    "geodesic": cmd_geodesic,
    "check-kernel": cmd_check_kernel,
}


def run_scenario(cfg, command, out, seed=None):
    """Run one command on a validated scenario and write the manifest; returns the manifest."""
    if command not in HANDLERS:
        raise ConfigError(f"unknown command {command!r}")
    cfg = load_config(cfg)
    seed = cfg.get("seed", 0) if seed is None else seed
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    threads = worker_count()
    t0 = time.perf_counter()
    with scipy.fft.set_workers(threads) if threads > 1 else nullcontext():
        files, summary = HANDLERS[command](cfg, out, seed)
    wall = time.perf_counter() - t0
    summary_path = write_json(out / "summary.json", summary)
    files = list(files) + [summary_path]
    manifest = {
        "command": command,
        "config_sha256": config_hash(cfg),
        "seed": seed,
        "threads": threads,
        "versions": {"relboltz": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "jsonschema": metadata.version("jsonschema"),
                     "python": platform.python_version(), "backend": kernels.backend_name()},
        "wall_time_s": {command: wall},
        "files": {Path(p).name: file_hash(p) for p in files},
    }
    write_json(out / "config.json", cfg)
    manifest["files"]["config.json"] = file_hash(out / "config.json")
    write_json(out / "manifest.json", manifest)
    return manifest


def main(argv=None):
    ap = argparse.ArgumentParser(prog="relboltz", description=__doc__.strip().splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="scenario JSON (path or name of a shipped scenario)")
    ap.add_argument("--out", required=True, help="run directory")
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args(argv)
    try:
        manifest = run_scenario(args.config, args.command, args.out, args.seed)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except RelBoltzError as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 1
    print(json.dumps({"out": str(args.out), "files": sorted(manifest["files"])}))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
