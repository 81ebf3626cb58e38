"""Command line front end: ``borninfeld {solve,diagnose,oracle,convergence,mollify}``.

A run is described by one JSON file validated against :data:`CONFIG_SCHEMA`.
``solve`` writes a result bundle directory::

    config.json        normalized echo of the run configuration
    nodes.txt          x y boundary_flag
    triangles.txt      i j k (0-based)
    metric.csv         triangle,cx,cy,alpha,s11,s12,s22
    atoms.csv          x,y,a
    density.csv        triangle,cx,cy,f        (only with a density)
    u.csv              x,y,u
    w.csv              triangle,cx,cy,w,saturated
    solver.log         iter, primal_res, dual_res, energy
    report.json        solver summary and diagnostics
    solution.vtk       optional

Exit codes: 0 success, 1 solver or numerical failure, 2 usage or
configuration error.  Failures print a one-line JSON error record on
stderr (and into ``error.json`` when an output directory is known).
"""
import argparse
import copy
import json
import logging
import math
import os
import sys
import warnings
from dataclasses import fields

import jsonschema
import numpy as np
from threadpoolctl import threadpool_limits

from . import diagnostics as diag
from . import fileio
from .energy import tilt
from .errors import (BornInfeldError, BundleLoadError, ConfigError, InvalidArgumentError,
                     InvalidProblemError)
from .measures import ChargeMeasure, MollifierKernel, mollify, preset_density
from .mesh import MetricField, triangulate_disk, triangulate_polygon
from .oracle import radial_potential, radial_slope, radial_tilt, radial_tilt_mass
from .solver import Problem, SolverConfig, solve_admm, solve_conic, solve_continuation, solve_picard

logger = logging.getLogger("borninfeld")

THREADS_ENV = "BORNINFELD_THREADS"

_PARAMS = {"type": "array", "items": {"type": "number"}}
_NAMED = {"type": "object", "required": ["name"], "additionalProperties": False,
          "properties": {"name": {"type": "string"}, "params": _PARAMS}}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["domain", "h"],
    "additionalProperties": False,
    "properties": {
        "domain": {"oneOf": [
            {"type": "object", "required": ["type", "radius"], "additionalProperties": False,
             "properties": {"type": {"const": "disk"}, "radius": {"type": "number", "exclusiveMinimum": 0}}},
            {"type": "object", "required": ["type", "vertices"], "additionalProperties": False,
             "properties": {"type": {"const": "polygon"},
                            "vertices": {"type": "array", "minItems": 3,
                                         "items": {"type": "array", "items": {"type": "number"},
                                                   "minItems": 2, "maxItems": 2}}}},
        ]},
        "h": {"type": "number", "exclusiveMinimum": 0},
        "mesh": {"type": "object", "additionalProperties": False, "properties": {
            "min_angle": {"type": "number", "exclusiveMinimum": 0, "maximum": 33},
            "grade_atoms": {"type": "boolean"},
            "insert_atoms": {"type": "boolean"}}},
        "metric": {"oneOf": [
            {"type": "object", "required": ["type"], "additionalProperties": False,
             "properties": {"type": {"const": "flat"}, "alpha": {"type": "number", "exclusiveMinimum": 0}}},
            {"type": "object", "required": ["type"], "additionalProperties": False,
             "properties": {"type": {"const": "preset"}, "alpha": _NAMED, "sigma": _NAMED}},
            {"type": "object", "required": ["type", "path"], "additionalProperties": False,
             "properties": {"type": {"const": "file"}, "path": {"type": "string"}}},
        ]},
        "charges": {"type": "object", "additionalProperties": False, "properties": {
            "atoms": {"type": "array", "items": {
                "type": "object", "required": ["x", "y", "a"], "additionalProperties": False,
                "properties": {"x": {"type": "number"}, "y": {"type": "number"}, "a": {"type": "number"}}}},
            "density": {"oneOf": [
                {"type": "object", "required": ["preset"], "additionalProperties": False,
                 "properties": {"preset": {"enum": ["uniform", "gaussian"]}, "params": _PARAMS}},
                {"type": "object", "required": ["file"], "additionalProperties": False,
                 "properties": {"file": {"type": "string"}}},
            ]}}},
        "boundary": {"oneOf": [
            {"type": "object", "required": ["type", "value"], "additionalProperties": False,
             "properties": {"type": {"const": "constant"}, "value": {"type": "number"}}},
            {"type": "object", "required": ["type", "a", "b", "c"], "additionalProperties": False,
             "properties": {"type": {"const": "affine"}, "a": {"type": "number"},
                            "b": {"type": "number"}, "c": {"type": "number"}}},
            {"type": "object", "required": ["type", "path"], "additionalProperties": False,
             "properties": {"type": {"const": "file"}, "path": {"type": "string"}}},
        ]},
        "solver": {"type": "object", "properties": {
            "method": {"enum": ["auto", "admm", "picard", "continuation", "conic"]}}},
        "diagnostics": {"type": "object"},
        "output": {"type": "object", "additionalProperties": False, "properties": {
            "directory": {"type": "string"}, "vtk": {"type": "boolean"}}},
        "seed": {"type": "integer", "minimum": 0},
    },
}

_DEFAULTS = {
    "mesh": {"min_angle": 20.0, "grade_atoms": True, "insert_atoms": True},
    "metric": {"type": "flat", "alpha": 1.0},
    "charges": {"atoms": []},
    "boundary": {"type": "constant", "value": 0.0},
    "solver": {"method": "auto"},
    "diagnostics": {},
    "output": {"directory": "run", "vtk": False},
    "seed": 0,
}

_SOLVER_KEYS = {f.name for f in fields(SolverConfig)} - {"log_path"}


class UsageError(BornInfeldError):
    """Bad command-line usage (exit code 2)."""


# ---------------------------------------------------------------- config

def _locate_key(text, key):
    """1-based line of the first occurrence of ``"key"`` in the raw JSON text."""
    needle = f'"{key}"'
    for n, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return n
    return None


def load_config(path):
    """Read, schema-validate and normalize a run configuration.

    Returns the normalized dict (defaults filled in).  Relative file paths in
    the config are resolved against the config's directory.
    """
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    cfg = parse_config(raw, text=text)
    base = os.path.dirname(os.path.abspath(path))
    for sect, key in (("metric", "path"), ("boundary", "path")):
        if key in cfg[sect] and not os.path.isabs(cfg[sect][key]):
            cfg[sect][key] = os.path.join(base, cfg[sect][key])
    dens = cfg["charges"].get("density")
    if dens and "file" in dens and not os.path.isabs(dens["file"]):
        dens["file"] = os.path.join(base, dens["file"])
    return cfg


def parse_config(raw, text=None):
    """Validate a config dict and fill defaults; errors name the offending field."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        line = None
        if text is not None:
            keys = [p for p in err.absolute_path if isinstance(p, str)]
            if keys:
                line = _locate_key(text, keys[-1])
        suffix = f" (line {line})" if line else ""
        raise ConfigError(f"{err.message}{suffix}", field=where)
    cfg = copy.deepcopy(_DEFAULTS)
    for key, val in raw.items():
        if isinstance(val, dict) and isinstance(cfg.get(key), dict) and key not in ("metric", "boundary"):
            cfg[key].update(copy.deepcopy(val))
        else:
            cfg[key] = copy.deepcopy(val)
    if cfg["metric"]["type"] == "flat":
        cfg["metric"].setdefault("alpha", 1.0)
    unknown = set(cfg["solver"]) - _SOLVER_KEYS - {"method"}
    if unknown:
        raise ConfigError(f"unknown solver keys {sorted(unknown)}", field="solver")
    try:
        diag.DiagnosticsConfig.from_dict(cfg["diagnostics"])
    except (InvalidArgumentError, TypeError) as exc:
        raise ConfigError(str(exc), field="diagnostics") from exc
    _check_atoms(cfg)
    return cfg


def _check_atoms(cfg):
    dom = cfg["domain"]
    for k, at in enumerate(cfg["charges"]["atoms"]):
        x, y = at["x"], at["y"]
        if dom["type"] == "disk":
            inside = math.hypot(x, y) < dom["radius"]
        else:
            from shapely.geometry import Point, Polygon
            inside = Polygon(dom["vertices"]).contains(Point(x, y))
        if not inside:
            raise ConfigError(f"atom {k} at ({x:g}, {y:g}) is not strictly inside the domain",
                              field=f"charges/atoms/{k}")


def solver_config(cfg, log_path=None):
    opts = {k: v for k, v in cfg["solver"].items() if k != "method"}
    if "eps_schedule" in opts and opts["eps_schedule"] is not None:
        opts["eps_schedule"] = tuple(opts["eps_schedule"])
    opts.setdefault("seed", cfg["seed"])
    try:
        return SolverConfig(log_path=log_path, **opts)
    except (InvalidArgumentError, TypeError) as exc:
        raise ConfigError(str(exc), field="solver") from exc


def build_mesh(cfg):
    dom, h = cfg["domain"], cfg["h"]
    mopt = cfg["mesh"]
    atoms = [(a["x"], a["y"]) for a in cfg["charges"]["atoms"]]
    extra = atoms if mopt["insert_atoms"] else []
    if dom["type"] == "disk":
        grade = atoms if mopt["grade_atoms"] else []
        return triangulate_disk(dom["radius"], h, extra_points=extra, min_angle=mopt["min_angle"],
                                grade_at=grade)
    return triangulate_polygon(dom["vertices"], h, extra_points=extra, min_angle=mopt["min_angle"])


_ALPHA_PRESETS = {
    "constant": lambda x, y, c=1.0: np.full_like(x, c),
    "linear": lambda x, y, a0=1.0, ax=0.0, ay=0.0: a0 + ax * x + ay * y,
    "radial": lambda x, y, a0=1.0, a2=0.0: a0 + a2 * (x * x + y * y),
}


def _sigma_preset(name, params):
    if name == "identity":
        return lambda x, y: np.broadcast_to(np.eye(2), x.shape + (2, 2)).copy()
    if name == "diagonal":
        s11, s22 = params

        def diagonal(x, y):
            out = np.zeros(x.shape + (2, 2))
            out[..., 0, 0], out[..., 1, 1] = s11, s22
            return out
        return diagonal
    if name == "conformal":
        c0, c2 = params
        return lambda x, y: (c0 + c2 * (x * x + y * y))[..., None, None] * np.eye(2)
    raise ConfigError(f"unknown sigma preset {name!r} (identity, diagonal, conformal)", field="metric/sigma")


def build_metric(cfg, mesh):
    m = cfg["metric"]
    if m["type"] == "flat":
        return MetricField.flat(mesh, m.get("alpha", 1.0))
    if m["type"] == "file":
        return read_metric_csv(m["path"], mesh)
    a_spec = m.get("alpha", {"name": "constant", "params": [1.0]})
    s_spec = m.get("sigma", {"name": "identity"})
    if a_spec["name"] not in _ALPHA_PRESETS:
        raise ConfigError(f"unknown alpha preset {a_spec['name']!r} ({', '.join(_ALPHA_PRESETS)})",
                          field="metric/alpha")
    params = a_spec.get("params", [])
    try:
        return MetricField.from_functions(
            mesh, alpha=lambda x, y: _ALPHA_PRESETS[a_spec["name"]](x, y, *params),
            sigma=_sigma_preset(s_spec["name"], s_spec.get("params", [])))
    except (InvalidArgumentError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc), field="metric") from exc


def write_metric_csv(path, mesh, metric):
    s = metric.sigma
    fileio.write_triangle_csv(path, mesh, {"alpha": metric.alpha, "s11": s[:, 0, 0],
                                           "s12": s[:, 0, 1], "s22": s[:, 1, 1]})


def read_metric_csv(path, mesh):
    c = fileio.read_csv_columns(path, ["triangle", "cx", "cy", "alpha", "s11", "s12", "s22"])
    if len(c["alpha"]) != mesh.n_triangles:
        raise BundleLoadError(f"{path}: {len(c['alpha'])} rows for {mesh.n_triangles} triangles")
    sigma = np.stack([np.stack([c["s11"], c["s12"]], -1), np.stack([c["s12"], c["s22"]], -1)], -2)
    return MetricField(sigma, c["alpha"])


def build_charges(cfg, mesh, metric):
    ch = cfg["charges"]
    atoms = [(a["x"], a["y"], a["a"]) for a in ch["atoms"]]
    density = None
    spec = ch.get("density")
    if spec:
        if "preset" in spec:
            try:
                density = preset_density(mesh, spec["preset"], *spec.get("params", []), metric=metric)
            except (InvalidArgumentError, ValueError) as exc:
                raise ConfigError(str(exc), field="charges/density") from exc
        else:
            density = read_density_csv(spec["file"], mesh)
    if atoms:
        arr = np.asarray(atoms, dtype=float)
        return ChargeMeasure(arr[:, :2], arr[:, 2], density)
    return ChargeMeasure(density=density)


def read_density_csv(path, mesh):
    c = fileio.read_csv_columns(path, ["triangle", "cx", "cy", "f"])
    if len(c["f"]) != mesh.n_triangles:
        raise BundleLoadError(f"{path}: {len(c['f'])} rows for {mesh.n_triangles} triangles")
    return c["f"]


def build_boundary(cfg, mesh):
    b = cfg["boundary"]
    x, y = mesh.nodes.T
    if b["type"] == "constant":
        return np.full(mesh.n_nodes, float(b["value"]))
    if b["type"] == "affine":
        return b["a"] * x + b["b"] * y + b["c"]
    c = fileio.read_csv_columns(b["path"], ["x", "y", "phi"])
    pts = np.column_stack([c["x"], c["y"]])
    if len(pts) != mesh.n_nodes or not np.allclose(pts, mesh.nodes, atol=1e-12):
        raise ConfigError("boundary file nodes do not match the mesh", field="boundary/path")
    return c["phi"]


def build_problem(cfg):
    mesh = build_mesh(cfg)
    metric = build_metric(cfg, mesh)
    rho = build_charges(cfg, mesh, metric)
    phi = build_boundary(cfg, mesh)
    return Problem(mesh, metric, rho, phi)


# ---------------------------------------------------------------- bundle

def write_bundle(out, cfg, problem, result, report, vtk=False):
    os.makedirs(out, exist_ok=True)
    mesh, metric, rho = problem.mesh, problem.metric, problem.rho
    with open(os.path.join(out, "config.json"), "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")
    fileio.write_mesh(mesh, os.path.join(out, "nodes.txt"), os.path.join(out, "triangles.txt"))
    write_metric_csv(os.path.join(out, "metric.csv"), mesh, metric)
    with open(os.path.join(out, "atoms.csv"), "w") as fh:
        fh.write("x,y,a\n")
        for (x, y), a in zip(rho.locations, rho.magnitudes):
            fh.write(f"{x:.17g},{y:.17g},{a:.17g}\n")
    if rho.density is not None:
        fileio.write_triangle_csv(os.path.join(out, "density.csv"), mesh, {"f": rho.density})
    fileio.write_nodal_csv(os.path.join(out, "u.csv"), mesh, result.u, "u")
    _write_w(out, mesh, metric, result.u)
    with open(os.path.join(out, "report.json"), "w") as fh:
        fh.write(report)
        fh.write("\n")
    if vtk:
        t = tilt(result.u, metric, mesh)
        fileio.write_vtk(os.path.join(out, "solution.vtk"), mesh, point_data={"u": result.u},
                         cell_data={"w": t.w, "alpha": metric.alpha})


def _write_w(out, mesh, metric, u):
    t = tilt(u, metric, mesh)
    fileio.write_triangle_csv(os.path.join(out, "w.csv"), mesh,
                              {"w": t.w, "saturated": t.saturated.astype(np.int64)})


def load_bundle(path):
    """Reload ``(cfg, mesh, metric, rho, u)`` from a bundle directory.

    ``w.csv`` is derived data; it is regenerated if missing.
    """
    if not os.path.isdir(path):
        raise BundleLoadError(f"bundle directory {path!r} not found")
    try:
        with open(os.path.join(path, "config.json")) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise BundleLoadError(f"cannot read config.json: {exc}") from exc
    mesh = fileio.read_mesh(os.path.join(path, "nodes.txt"), os.path.join(path, "triangles.txt"))
    metric = read_metric_csv(os.path.join(path, "metric.csv"), mesh)
    at = fileio.read_csv_columns(os.path.join(path, "atoms.csv"), ["x", "y", "a"])
    density = None
    if fileio.exists(path, "density.csv"):
        density = read_density_csv(os.path.join(path, "density.csv"), mesh)
    rho = ChargeMeasure(np.column_stack([at["x"], at["y"]]), at["a"], density)
    c = fileio.read_csv_columns(os.path.join(path, "u.csv"), ["x", "y", "u"])
    if len(c["u"]) != mesh.n_nodes:
        raise BundleLoadError(f"u.csv has {len(c['u'])} rows for {mesh.n_nodes} nodes")
    if not np.array_equal(np.column_stack([c["x"], c["y"]]), mesh.nodes):
        raise BundleLoadError("u.csv coordinates do not match nodes.txt")
    u = c["u"]
    if not np.all(np.isfinite(u)):
        raise BundleLoadError("u.csv contains non-finite values")
    if not fileio.exists(path, "w.csv"):
        logger.info("w.csv missing; recomputing from u.csv")
        _write_w(path, mesh, metric, u)
    return cfg, mesh, metric, rho, u


def _solver_summary(result):
    return {"method": result.method, "iterations": result.iterations,
            "newton_iterations": result.newton_iterations,
            "primal_residual": result.primal_residual, "dual_residual": result.dual_residual,
            "energy": result.energy_value, "weak_residual": result.weak_residual,
            "continuation_trace": [list(t) for t in result.continuation_trace]}


def _dump(obj):
    return json.dumps(diag._jsonable(obj), indent=2, sort_keys=True)


def _diagnostics_config(d):
    try:
        return diag.DiagnosticsConfig.from_dict(d)
    except (InvalidArgumentError, TypeError) as exc:
        raise ConfigError(str(exc), field="diagnostics") from exc


def write_diagnostics_tables(out, report, scan_pair):
    with open(os.path.join(out, "ball_growth.csv"), "w") as fh:
        fh.write("center_x,center_y,s,I,I_over_s\n")
        for key in sorted(report.ball_growth_table):
            cx, cy = key.split(",")
            for s, i, r in report.ball_growth_table[key]:
                fh.write(f"{cx},{cy},{s:.17g},{i:.17g},{r:.17g}\n")
    with open(os.path.join(out, "light_segment.csv"), "w") as fh:
        fh.write("source,target,max_ratio\n")
        fh.write(f"{scan_pair[0]},{scan_pair[1]},{report.light_segment_max_ratio:.17g}\n")


# ---------------------------------------------------------------- commands

def run_solve(cfg, out=None):
    """Solve the configured problem and write the result bundle; returns the bundle path."""
    out = out or cfg["output"]["directory"]
    os.makedirs(out, exist_ok=True)
    stale = os.path.join(out, "error.json")
    if os.path.exists(stale):
        os.remove(stale)
    problem = build_problem(cfg)
    log_path = os.path.join(out, "solver.log")
    with open(log_path, "w") as fh:
        fh.write("iter, primal_res, dual_res, energy\n")
    scfg = solver_config(cfg, log_path)
    method = cfg["solver"].get("method", "auto")
    if method == "auto":
        method = "continuation" if problem.rho.has_atoms() else "admm"
    solve = {"admm": solve_admm, "picard": solve_picard, "continuation": solve_continuation,
             "conic": solve_conic}[method]
    result = solve(problem, scfg)
    dcfg = _diagnostics_config(cfg["diagnostics"])
    report = diag.run_diagnostics(result.u, problem.rho, problem.metric, problem.mesh, dcfg)
    body = {"solver": _solver_summary(result), "diagnostics": diag._jsonable(report.to_dict()),
            "mesh": {"n_nodes": problem.mesh.n_nodes, "n_triangles": problem.mesh.n_triangles,
                     "h_max": problem.mesh.h_max}}
    write_bundle(out, cfg, problem, result, _dump(body), vtk=cfg["output"].get("vtk", False))
    write_diagnostics_tables(out, report, report.offending_pair)
    return out


def run_diagnose(bundle, diag_config=None, out=None):
    """Recompute all diagnostics from a bundle; returns the report path."""
    cfg, mesh, metric, rho, u = load_bundle(bundle)
    d = dict(cfg.get("diagnostics", {}))
    if diag_config:
        d.update(diag_config)
    report = diag.run_diagnostics(u, rho, metric, mesh, _diagnostics_config(d))
    out = out or bundle
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "diagnostics.json")
    with open(path, "w") as fh:
        fh.write(report.to_json())
        fh.write("\n")
    write_diagnostics_tables(out, report, report.offending_pair)
    return path


def oracle_table(a, m, r_min, r_max, n):
    """Rows ``(r, u', u, w, I(r))`` on a uniform grid; ``u`` is anchored at the charge."""
    if m != int(m) or m < 2:
        raise UsageError(f"dimension m must be an integer >= 2, got {m}")
    if not (0 < r_min < r_max) or n < 2:
        raise UsageError("need 0 < r_min < r_max and n >= 2")
    r = np.linspace(r_min, r_max, int(n))
    return np.column_stack([r, radial_slope(a, m, r), radial_potential(a, m, 0.0, r),
                            radial_tilt(a, m, r), [radial_tilt_mass(a, m, x) for x in r]])


def write_table(fh, header, rows):
    fh.write(",".join(header) + "\n")
    for row in rows:
        fh.write(",".join(fileio.FLOAT_FMT % v for v in row) + "\n")


ORACLES = ("single atom at the centre of a disk, flat metric, constant boundary value, no density",
           "zero charge with affine boundary data, flat metric (exact affine solution)")


def convergence_oracle(cfg):
    """Return ``f(mesh) -> exact nodal values, mask`` for an oracle-comparable config."""
    ch, dom, met, bd = cfg["charges"], cfg["domain"], cfg["metric"], cfg["boundary"]
    flat = met["type"] == "flat" and met.get("alpha", 1.0) == 1.0
    no_density = not ch.get("density")
    atoms = [a for a in ch["atoms"] if a["a"] != 0]
    if flat and no_density and not atoms and bd["type"] == "affine":
        return lambda mesh: (bd["a"] * mesh.nodes[:, 0] + bd["b"] * mesh.nodes[:, 1] + bd["c"],
                             np.ones(mesh.n_nodes, dtype=bool))
    if (flat and no_density and len(atoms) == 1 and dom["type"] == "disk" and bd["type"] == "constant"
            and atoms[0]["x"] == 0 and atoms[0]["y"] == 0):
        a, R, c = atoms[0]["a"], dom["radius"], bd["value"]

        def exact(mesh):
            r = np.linalg.norm(mesh.nodes, axis=1)
            rr = np.maximum(r, 1e-300)
            # oracle anchored at the boundary; note the discrete sign convention
            # div(w Du) = rho makes a positive charge a potential minimum
            val = c - (radial_potential(a, 2, 0.0, np.full_like(rr, R)) - radial_potential(a, 2, 0.0, rr))
            return val, r >= 0.1 * R - 1e-12
        return exact
    raise UsageError("no oracle for this configuration; available oracles: " + "; ".join(ORACLES))


def run_convergence(cfg, hs, out=None):
    """Solve on each ``h`` and compare with the oracle; returns ``(rows, order)``."""
    exact = convergence_oracle(cfg)
    rows = []
    for h in hs:
        c = copy.deepcopy(cfg)
        c["h"] = float(h)
        problem = build_problem(c)
        method = c["solver"].get("method", "auto")
        solve = solve_continuation if method == "continuation" else solve_admm
        res = solve(problem, solver_config(c))
        ex, mask = exact(problem.mesh)
        err = float(np.max(np.abs(res.u - ex)[mask]))
        rows.append((float(h), problem.mesh.h_max, problem.mesh.n_nodes, err, res.wall_time))
        logger.info("h=%g: error %.3e (%d nodes, %.1f s)", h, err, problem.mesh.n_nodes, res.wall_time)
    errs = np.array([r[3] for r in rows])
    order = float("nan")
    if len(rows) >= 2 and np.all(errs > 1e-13):
        order = float(np.polyfit(np.log([r[1] for r in rows]), np.log(errs), 1)[0])
    if out:
        with open(out, "w") as fh:
            write_table(fh, ["h", "h_max", "n_nodes", "max_error", "wall_time"], rows)
            fh.write(f"# observed_order,{order:.17g}\n")
    return rows, order


def run_mollify(cfg, epsilon, out=None):
    """Mollify the configured charges; returns the density measure and writes ``density.csv``."""
    mesh = build_mesh(cfg)
    metric = build_metric(cfg, mesh)
    rho = build_charges(cfg, mesh, metric)
    moll = mollify(rho, MollifierKernel(epsilon), mesh, metric)
    if out:
        fileio.write_triangle_csv(out, mesh, {"f": moll.density})
    return mesh, metric, moll


# ---------------------------------------------------------------- argparse

def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration (JSON)")
    common.add_argument("--out", help="output directory or file")
    common.add_argument("--threads", type=int, help=f"worker threads (overrides ${THREADS_ENV})")
    common.add_argument("--seed", type=int, help="random seed (overrides the config)")
    common.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    p = argparse.ArgumentParser(prog="borninfeld", parents=[common],
                                description="Born-Infeld electrostatics with measure sources")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve and write a result bundle")
    d = sub.add_parser("diagnose", parents=[common], help="recompute diagnostics from a bundle")
    d.add_argument("bundle")
    d.add_argument("--diagnostics", help="JSON file with diagnostics settings")
    o = sub.add_parser("oracle", parents=[common], help="radial point-charge profile table")
    o.add_argument("--a", type=float, default=2 * math.pi, help="point charge (default 2 pi)")
    o.add_argument("--m", type=float, default=2, help="space dimension, >= 2")
    o.add_argument("--r-min", type=float, default=0.01, help="first radius")
    o.add_argument("--r-max", type=float, default=1.0, help="last radius")
    o.add_argument("--n", type=int, default=100, help="number of radii")
    c = sub.add_parser("convergence", parents=[common], help="error table against an oracle")
    c.add_argument("--h", default="0.08,0.04,0.02", help="comma-separated mesh sizes")
    mo = sub.add_parser("mollify", parents=[common], help="mollify the configured charges")
    mo.add_argument("--epsilon", type=float, required=True, help="mollifier radius")
    return p


def _threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return None


def _need_config(args):
    if not args.config:
        raise UsageError(f"{args.command} needs --config")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


def _dispatch(args):
    if args.command == "solve":
        cfg = _need_config(args)
        out = run_solve(cfg, args.out)
        print(out)
    elif args.command == "diagnose":
        extra = None
        if args.diagnostics:
            with open(args.diagnostics) as fh:
                extra = json.load(fh)
        print(run_diagnose(args.bundle, extra, args.out))
    elif args.command == "oracle":
        rows = oracle_table(args.a, args.m, args.r_min, args.r_max, args.n)
        header = ["r", "u_prime", "u", "w", "I"]
        if args.out:
            with open(args.out, "w") as fh:
                write_table(fh, header, rows)
        else:
            write_table(sys.stdout, header, rows)
    elif args.command == "convergence":
        cfg = _need_config(args)
        try:
            hs = [float(x) for x in args.h.split(",") if x.strip()]
        except ValueError:
            raise UsageError(f"--h must be a comma-separated list of numbers, got {args.h!r}") from None
        rows, order = run_convergence(cfg, hs, args.out)
        write_table(sys.stdout, ["h", "h_max", "n_nodes", "max_error", "wall_time"], rows)
        print(f"# observed_order,{order:.17g}")
    elif args.command == "mollify":
        cfg = _need_config(args)
        _, _, moll = run_mollify(cfg, args.epsilon, args.out or "density.csv")
        print(args.out or "density.csv")


def _error_record(exc):
    rec = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("field", "atom_index"):
        if getattr(exc, attr, None) is not None:
            rec[attr] = getattr(exc, attr)
    return rec


def main(argv=None):
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        threads = _threads(args)
        with threadpool_limits(limits=threads), warnings.catch_warnings():
            warnings.simplefilter("default")
            _dispatch(args)
        return 0
    except (UsageError, ConfigError, InvalidProblemError, InvalidArgumentError, BundleLoadError) as exc:
        code = 2
        rec = _error_record(exc)
    except BornInfeldError as exc:
        code = 1
        rec = _error_record(exc)
    print(json.dumps(rec, sort_keys=True), file=sys.stderr)
    out = getattr(args, "out", None)
    if out and args.command == "solve":
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "error.json"), "w") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
