"""Plain-text persistence: mesh files, field CSVs and legacy VTK.

Floats are written with 17 significant digits so that every value
survives a text round trip bit for bit.

File layouts
------------
nodes file      ``x y boundary_flag`` per line
triangles file  ``i j k`` per line, 0-based
nodal CSV       header ``x,y,<name>``
triangle CSV    header ``triangle,cx,cy,<name>``
"""
import csv
import os

import numpy as np

from .errors import BundleLoadError
from .mesh import Mesh

FLOAT_FMT = "%.17g"


def write_mesh(mesh, node_path, triangle_path):
    flags = np.zeros(mesh.n_nodes, dtype=int)
    flags[mesh.boundary_nodes] = 1
    with open(node_path, "w") as fh:
        for (x, y), f in zip(mesh.nodes, flags):
            fh.write(f"{x:.17g} {y:.17g} {f}\n")
    np.savetxt(triangle_path, mesh.triangles, fmt="%d")


def read_mesh(node_path, triangle_path, min_angle=None):
    """Load a mesh written by :func:`write_mesh`.

    The boundary flags are checked against the boundary recomputed from the
    triangles.
    """
    try:
        nd = np.loadtxt(node_path, ndmin=2)
        tri = np.loadtxt(triangle_path, dtype=np.int64, ndmin=2)
    except (OSError, ValueError) as exc:
        raise BundleLoadError(f"cannot read mesh files: {exc}") from exc
    if nd.shape[1] != 3 or tri.shape[1] != 3:
        raise BundleLoadError("mesh files need 3 columns (x y flag / i j k)")
    mesh = Mesh(nd[:, :2], tri, min_angle=min_angle)
    flags = np.flatnonzero(nd[:, 2] != 0)
    if not np.array_equal(np.sort(flags), np.sort(mesh.boundary_nodes)):
        raise BundleLoadError("boundary flags do not match the triangulation")
    return mesh


def write_nodal_csv(path, mesh, values, name="u"):
    values = np.asarray(values, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", name])
        for (x, y), v in zip(mesh.nodes, values):
            w.writerow([FLOAT_FMT % x, FLOAT_FMT % y, FLOAT_FMT % v])


def write_triangle_csv(path, mesh, columns):
    """``columns`` maps column name to a per-triangle array (written in insertion order)."""
    names = list(columns)
    cols = [np.asarray(columns[k]) for k in names]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["triangle", "cx", "cy"] + names)
        for t, (cx, cy) in enumerate(mesh.centroids):
            row = [str(t), FLOAT_FMT % cx, FLOAT_FMT % cy]
            for c in cols:
                v = c[t]
                row.append(str(int(v)) if np.issubdtype(c.dtype, np.integer) or c.dtype == bool
                           else FLOAT_FMT % v)
            w.writerow(row)


def read_csv_columns(path, expected=None):
    """Read a headed numeric CSV into a dict of float arrays."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise BundleLoadError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise BundleLoadError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    if expected is not None and header[:len(expected)] != list(expected):
        raise BundleLoadError(f"{path}: expected columns {expected}, found {header}")
    try:
        data = np.array(body, dtype=float).reshape(len(body), len(header))
    except ValueError as exc:
        raise BundleLoadError(f"{path}: malformed row ({exc})") from exc
    return {k: data[:, i] for i, k in enumerate(header)}


def write_vtk(path, mesh, point_data=None, cell_data=None, title="borninfeld"):
    """Legacy ASCII VTK unstructured grid with scalar point and cell fields."""
    point_data = point_data or {}
    cell_data = cell_data or {}
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {mesh.n_nodes} double"]
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in mesh.nodes]
    lines.append(f"CELLS {mesh.n_triangles} {4 * mesh.n_triangles}")
    lines += [f"3 {i} {j} {k}" for i, j, k in mesh.triangles]
    lines.append(f"CELL_TYPES {mesh.n_triangles}")
    lines += ["5"] * mesh.n_triangles
    for header, n, fields in (("POINT_DATA", mesh.n_nodes, point_data),
                              ("CELL_DATA", mesh.n_triangles, cell_data)):
        if not fields:
            continue
        lines.append(f"{header} {n}")
        for name, vals in fields.items():
            vals = np.asarray(vals, dtype=float)
            if vals.shape != (n,):
                raise ValueError(f"field {name!r} has shape {vals.shape}, expected ({n},)")
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [FLOAT_FMT % v for v in vals]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def exists(directory, name):
    return os.path.isfile(os.path.join(directory, name))
