"""Figures written next to the CSV outputs (Agg backend, files only)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import PolyCollection  # noqa: E402
from matplotlib.tri import Triangulation  # noqa: E402

from .dgspace import DgSpace  # noqa: E402
from .entropy import u_eval  # noqa: E402
from .io import subdivided_triangles  # noqa: E402
from .polymesh import PolyMesh  # noqa: E402


def _finish(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata={"Software": None} if path.suffix == ".png" else None)
    plt.close(fig)
    return path


def _mesh_polys(mesh: PolyMesh):
    return [mesh.cell_points(k) for k in range(mesh.n_cells)]


def plot_mesh(mesh: PolyMesh, path, title: str | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(6, 6 * _aspect(mesh)))
    colors = None
    if mesh.cell_labels is not None:
        colors = plt.cm.Pastel1(mesh.cell_labels % 9)
    pc = PolyCollection(_mesh_polys(mesh), facecolors=colors if colors is not None else "none", edgecolors="k", linewidths=0.5)
    ax.add_collection(pc)
    ax.autoscale_view()
    ax.set_aspect("equal")
    ax.set_title(title or f"{mesh.n_cells} cells, h = {mesh.h:.3g}")
    return _finish(fig, path)


def plot_solution(space: DgSpace, W, path, title: str = "u(w_h)", level: int | None = None) -> Path:
    pts, tris, cells = subdivided_triangles(space, level)
    u = u_eval(space.eval_cells(W, cells, pts))
    fig, ax = plt.subplots(figsize=(7, 7 * _aspect(space.mesh)))
    tri = Triangulation(pts[:, 0], pts[:, 1], tris)
    tc = ax.tripcolor(tri, u, shading="gouraud", vmin=0.0, vmax=1.0, cmap="viridis")
    ax.add_collection(PolyCollection(_mesh_polys(space.mesh), facecolors="none", edgecolors="w", linewidths=0.3, alpha=0.5))
    ax.set_aspect("equal")
    ax.set_title(title)
    fig.colorbar(tc, ax=ax, shrink=0.8)
    return _finish(fig, path)


def plot_cell_field(mesh: PolyMesh, values, path, title: str, label: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(7, 7 * _aspect(mesh)))
    pc = PolyCollection(_mesh_polys(mesh), array=np.asarray(values, dtype=float), cmap="magma", edgecolors="k", linewidths=0.2)
    ax.add_collection(pc)
    ax.autoscale_view()
    ax.set_aspect("equal")
    ax.set_title(title)
    fig.colorbar(pc, ax=ax, shrink=0.8, label=label)
    return _finish(fig, path)


def plot_ledger(rows: list[dict], path) -> Path:
    t = [r["time"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(t, [r["lhs"] for r in rows], label="accumulated left side")
    ax.plot(t, [r["rhs"] for r in rows], "--", label="bound")
    ax.plot(t, [r["entropy"] for r in rows], ":", label="entropy")
    ax.set_xlabel("t")
    ax.legend()
    ax.set_title("discrete entropy inequality")
    return _finish(fig, path)


def plot_convergence(rows: list[dict], axis: str, path) -> Path:
    x = np.array([float(r["abscissa"]) for r in rows])
    fig, ax = plt.subplots(figsize=(6, 4))
    for key, marker in (("E_c", "o"), ("E_sigma", "s"), ("E_c_degradation", "^")):
        if key in rows[0] and rows[0][key] not in ("", None):
            y = np.array([float(r[key]) for r in rows])
            ax.loglog(x, y, marker=marker, label=key)
    ax.set_xlabel(axis)
    ax.set_ylabel("error")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    return _finish(fig, path)


def _aspect(mesh: PolyMesh) -> float:
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    span = hi - lo
    return float(np.clip(span[1] / span[0], 0.25, 1.5))
