"""File formats: mesh JSON, coefficient snapshots, legacy VTK, CSV tables.

Mesh JSON::

    {"vertices": [[x, y], ...], "cells": [[i0, i1, ...], ...],
     "labels": [int, ...], "axonal": [[ax, ay], ...]}

``labels`` and ``axonal`` are optional; indices are 0-based and cells are
counter-clockwise.

Snapshot JSON::

    {"format": "fkldg-snapshot", "version": 1, "degree": l, "n_cells": K,
     "n_loc": n, "step": s, "time": t, "W": [...], "Sigma": [...]}

``W`` holds n_cells * n_loc scalar coefficients cell by cell; ``Sigma``
holds 2 * n_cells * n_loc coefficients, per cell the x block then the y
block. Coefficients refer to the cell-wise orthonormal basis rebuilt from
the same mesh and degree. Floats are written with ``repr`` so a round trip
is exact.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
import scipy.io

from .dgspace import DgSpace, triangulate
from .entropy import u_eval
from .polymesh import MeshError, PolyMesh

SNAPSHOT_FORMAT = "fkldg-snapshot"
SNAPSHOT_VERSION = 1


# -- meshes --------------------------------------------------------------------------


def mesh_from_dict(data: dict) -> PolyMesh:
    if not isinstance(data, dict) or "vertices" not in data or "cells" not in data:
        raise MeshError("mesh file must be an object with 'vertices' and 'cells'")
    try:
        vertices = np.asarray(data["vertices"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise MeshError(f"malformed vertices: {exc}") from None
    cells = data["cells"]
    if not isinstance(cells, list):
        raise MeshError("'cells' must be a list of vertex-index lists")
    for k, c in enumerate(cells):
        if not isinstance(c, list) or not all(isinstance(i, int) and not isinstance(i, bool) for i in c):
            raise MeshError(f"cell {k}: expected a list of integer vertex indices")
    labels = data.get("labels")
    if labels is not None and (not isinstance(labels, list) or not all(isinstance(l, int) for l in labels)):
        raise MeshError("'labels' must be a list of integers")
    return PolyMesh(vertices, cells, labels, data.get("axonal"))


def load_mesh(path) -> PolyMesh:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MeshError(f"{path}: not valid JSON ({exc})") from None
    return mesh_from_dict(data)


def save_mesh(mesh: PolyMesh, path) -> None:
    _write_json(path, mesh.to_dict())


# -- snapshots -----------------------------------------------------------------------


def snapshot_dict(space: DgSpace, W, Sigma=None, step: int = 0, time: float = 0.0) -> dict:
    return {
        "format": SNAPSHOT_FORMAT,
        "version": SNAPSHOT_VERSION,
        "degree": space.degree,
        "n_cells": space.n_cells,
        "n_loc": space.n_loc,
        "step": int(step),
        "time": float(time),
        "W": [float(v) for v in W],
        "Sigma": None if Sigma is None else [float(v) for v in Sigma],
    }


def write_snapshot(path, space: DgSpace, W, Sigma=None, step: int = 0, time: float = 0.0) -> None:
    _write_json(path, snapshot_dict(space, W, Sigma, step, time))


def read_snapshot(path) -> dict:
    data = json.loads(Path(path).read_text())
    if data.get("format") != SNAPSHOT_FORMAT:
        raise ValueError(f"{path}: not a snapshot file")
    if data.get("version") != SNAPSHOT_VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {data.get('version')}")
    n = data["n_cells"] * data["n_loc"]
    W = np.array(data["W"], dtype=float)
    if W.shape != (n,):
        raise ValueError(f"{path}: W has {W.size} entries, expected {n}")
    data["W"] = W
    if data.get("Sigma") is not None:
        data["Sigma"] = np.array(data["Sigma"], dtype=float)
        if data["Sigma"].shape != (2 * n,):
            raise ValueError(f"{path}: Sigma has {data['Sigma'].size} entries, expected {2 * n}")
    return data


# -- VTK -------------------------------------------------------------------------------


def subdivided_triangles(space: DgSpace, level: int | None = None):
    """Fan triangles of every cell split ``level`` times per edge.

    Returns ``(points, triangles, cells)``; points are not shared between
    cells so the discontinuous field is represented faithfully.
    """
    level = space.degree + 1 if level is None else int(level)
    i, j = np.meshgrid(np.arange(level + 1), np.arange(level + 1), indexing="ij")
    keep = i + j <= level
    bi, bj = i[keep], j[keep]
    index = -np.ones((level + 1, level + 1), dtype=int)
    index[bi, bj] = np.arange(len(bi))
    local = []
    for a in range(level):
        for b in range(level - a):
            local.append((index[a, b], index[a + 1, b], index[a, b + 1]))
            if a + b < level - 1:
                local.append((index[a + 1, b], index[a + 1, b + 1], index[a, b + 1]))
    local = np.array(local)
    bary = np.stack([bi, bj], axis=1) / level
    pts, tris, cells = [], [], []
    offset = 0
    for k in range(space.n_cells):
        for a, b, c in triangulate(space.mesh.cell_points(k), space.centers[k]):
            p = a + np.outer(bary[:, 0], b - a) + np.outer(bary[:, 1], c - a)
            pts.append(p)
            tris.append(local + offset)
            cells.append(np.full(len(p), k))
            offset += len(p)
    return np.vstack(pts), np.vstack(tris), np.concatenate(cells)


def write_vtk(path, space: DgSpace, W, level: int | None = None, title: str = "fkldg field") -> dict:
    """Legacy ASCII VTK unstructured grid of u(w_h) on subdivided fan triangles."""
    pts, tris, cells = subdivided_triangles(space, level)
    w = space.eval_cells(W, cells, pts)
    u = u_eval(w)
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID", f"POINTS {len(pts)} double"]
    lines += [f"{x!r} {y!r} 0.0" for x, y in pts.tolist()]
    lines.append(f"CELLS {len(tris)} {4 * len(tris)}")
    lines += [f"3 {a} {b} {c}" for a, b, c in tris.tolist()]
    lines.append(f"CELL_TYPES {len(tris)}")
    lines += ["5"] * len(tris)
    lines += [f"POINT_DATA {len(pts)}", "SCALARS u double 1", "LOOKUP_TABLE default"]
    lines += [repr(float(v)) for v in u]
    lines += ["SCALARS w double 1", "LOOKUP_TABLE default"]
    lines += [repr(float(v)) for v in w]
    lines += [f"CELL_DATA {len(tris)}", "SCALARS mesh_cell int 1", "LOOKUP_TABLE default"]
    tri_cell = cells[tris[:, 0]]
    lines += [str(int(k)) for k in tri_cell]
    Path(path).write_text("\n".join(lines) + "\n")
    return {"points": len(pts), "triangles": len(tris), "min_u": float(u.min()), "max_u": float(u.max())}


def read_vtk_scalars(path, name: str = "u") -> np.ndarray:
    """Point scalars ``name`` from a file written by :func:`write_vtk`."""
    lines = Path(path).read_text().splitlines()
    n = None
    for i, line in enumerate(lines):
        if line.startswith("POINT_DATA"):
            n = int(line.split()[1])
        if line == f"SCALARS {name} double 1":
            return np.array([float(v) for v in lines[i + 2 : i + 2 + n]])
    raise KeyError(name)


# -- tables and matrices ---------------------------------------------------------------


def write_csv(path, rows: list[dict], columns: list[str] | None = None) -> None:
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: _fmt(r.get(k)) for k in columns})


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def dump_matrices(directory, matrices: dict) -> list[Path]:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, mat in matrices.items():
        p = out / f"{name}.mtx"
        scipy.io.mmwrite(str(p), mat.tocoo(), precision=17)
        written.append(p)
    return written


def write_json(path, data) -> None:
    _write_json(path, data)


def _write_json(path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return "" if v is None else v
