"""Polygonal meshes: storage, validation, facet topology and Voronoi generation.

Cells are counter-clockwise vertex loops. Facets are rebuilt from the cells;
an interior facet is oriented from its lower-index cell ``K1`` to the
higher-index cell ``K2`` and its unit normal points out of ``K1``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.sparse import coo_matrix
from scipy.spatial import Voronoi, QhullError, cKDTree

logger = logging.getLogger(__name__)

BOUNDARY = -1


class MeshError(ValueError):
    """Raised for malformed or invalid mesh data."""


@dataclass(frozen=True)
class Facet:
    endpoints: tuple[int, int]
    cells: tuple[int, int]  # (K1, K2) or (K1, BOUNDARY)
    unit_normal: np.ndarray
    length: float

    @property
    def kind(self) -> str:
        return "boundary" if self.cells[1] == BOUNDARY else "interior"


def polygon_area(pts: np.ndarray) -> float:
    """Signed area (positive for counter-clockwise loops)."""
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_centroid(pts: np.ndarray) -> np.ndarray:
    x, y = pts[:, 0], pts[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = 0.5 * cross.sum()
    cx = ((x + xn) * cross).sum() / (6.0 * a)
    cy = ((y + yn) * cross).sum() / (6.0 * a)
    return np.array([cx, cy])


def polygon_diameter(pts: np.ndarray) -> float:
    d = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((d**2).sum(-1)).max())


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def is_simple_polygon(pts: np.ndarray) -> bool:
    m = len(pts)
    if m < 3:
        return False
    if len({tuple(p) for p in pts}) != m:
        return False
    for i in range(m):
        a, b = pts[i], pts[(i + 1) % m]
        for j in range(i + 2, m):
            if i == 0 and j == m - 1:
                continue
            c, d = pts[j], pts[(j + 1) % m]
            if _segments_cross(a, b, c, d):
                return False
    return True


class PolyMesh:
    """Immutable polygonal mesh with facet topology.

    Attributes
    ----------
    vertices : (nV, 2) array
    cells : list of int arrays, counter-clockwise vertex loops
    cell_labels : (nC,) int array or None
    cell_areas, cell_diameters, cell_centroids : per-cell geometry
    cell_facet_counts : number of stored polygon edges per cell
    facet_vertices : (nF, 2) vertex indices
    facet_cells : (nF, 2) cell indices, second entry ``BOUNDARY`` on the boundary
    facet_normals : (nF, 2) unit normals pointing out of ``facet_cells[:, 0]``
    facet_lengths : (nF,)
    """

    def __init__(
        self,
        vertices,
        cells: Sequence[Sequence[int]],
        labels: Sequence[int] | None = None,
        axonal: Sequence[Sequence[float]] | None = None,
    ):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise MeshError("vertices must be an (n, 2) array")
        self.cells = [np.asarray(c, dtype=int) for c in cells]
        if not self.cells:
            raise MeshError("mesh has no cells")
        self.cell_labels = None if labels is None else np.asarray(labels, dtype=int)
        if self.cell_labels is not None and len(self.cell_labels) != len(self.cells):
            raise MeshError(
                f"labels has {len(self.cell_labels)} entries for {len(self.cells)} cells"
            )
        self.axonal = None if axonal is None else np.asarray(axonal, dtype=float)
        if self.axonal is not None and self.axonal.shape != (len(self.cells), 2):
            raise MeshError("axonal directions must be one 2-vector per cell")
        self._validate_cells()
        self._build_geometry()
        self._build_facets()
        for a in (self.vertices, self.cell_areas, self.facet_normals):
            a.setflags(write=False)

    # -- construction -----------------------------------------------------

    def _validate_cells(self):
        nv = len(self.vertices)
        for k, c in enumerate(self.cells):
            if len(c) < 3:
                raise MeshError(f"cell {k}: fewer than 3 vertices")
            if c.min() < 0 or c.max() >= nv:
                raise MeshError(f"cell {k}: vertex index out of range")
            pts = self.vertices[c]
            if not is_simple_polygon(pts):
                raise MeshError(f"cell {k}: polygon is not simple")
            if polygon_area(pts) <= 0.0:
                raise MeshError(f"cell {k}: non-positive signed area (not counter-clockwise)")

    def _build_geometry(self):
        pts = [self.vertices[c] for c in self.cells]
        self.cell_areas = np.array([polygon_area(p) for p in pts])
        self.cell_centroids = np.array([polygon_centroid(p) for p in pts])
        self.cell_diameters = np.array([polygon_diameter(p) for p in pts])
        self.cell_facet_counts = np.array([len(c) for c in self.cells], dtype=int)

    def _build_facets(self):
        edges: dict[tuple[int, int], list[tuple[int, int, int]]] = {}
        for k, c in enumerate(self.cells):
            for a, b in zip(c, np.roll(c, -1)):
                key = (min(a, b), max(a, b))
                edges.setdefault(key, []).append((k, int(a), int(b)))
        fv, fc = [], []
        for key, owners in edges.items():
            if len(owners) > 2:
                raise MeshError(f"edge {key} shared by more than two cells: {[o[0] for o in owners]}")
            if len(owners) == 2:
                (k1, a1, b1), (k2, a2, b2) = sorted(owners)
                if (a1, b1) != (b2, a2):
                    raise MeshError(f"cells {k1} and {k2} traverse edge {key} with the same orientation")
                fv.append((a1, b1))
                fc.append((k1, k2))
            else:
                k1, a1, b1 = owners[0]
                fv.append((a1, b1))
                fc.append((k1, BOUNDARY))
        order = np.lexsort((np.array(fc)[:, 1], np.array(fc)[:, 0]))
        self.facet_vertices = np.array(fv, dtype=int)[order]
        self.facet_cells = np.array(fc, dtype=int)[order]
        t = self.vertices[self.facet_vertices[:, 1]] - self.vertices[self.facet_vertices[:, 0]]
        self.facet_lengths = np.hypot(t[:, 0], t[:, 1])
        if np.any(self.facet_lengths <= 0):
            raise MeshError("zero-length facet")
        # (a -> b) is counter-clockwise in K1, so (dy, -dx) points out of K1
        self.facet_normals = np.column_stack([t[:, 1], -t[:, 0]]) / self.facet_lengths[:, None]
        self.interior_facets = np.flatnonzero(self.facet_cells[:, 1] != BOUNDARY)
        self.boundary_facets = np.flatnonzero(self.facet_cells[:, 1] == BOUNDARY)

    # -- queries ----------------------------------------------------------

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_facets(self) -> int:
        return len(self.facet_cells)

    @property
    def h(self) -> float:
        return float(self.cell_diameters.max())

    @property
    def area(self) -> float:
        return float(self.cell_areas.sum())

    def cell_points(self, k: int) -> np.ndarray:
        return self.vertices[self.cells[k]]

    def facet(self, f: int) -> Facet:
        a, b = self.facet_vertices[f]
        k1, k2 = self.facet_cells[f]
        return Facet((int(a), int(b)), (int(k1), int(k2)), self.facet_normals[f].copy(), float(self.facet_lengths[f]))

    @property
    def facets(self) -> list[Facet]:
        return [self.facet(f) for f in range(self.n_facets)]

    def cell_facets(self, k: int) -> np.ndarray:
        return np.flatnonzero((self.facet_cells[:, 0] == k) | (self.facet_cells[:, 1] == k))

    def facet_ratio(self, f: int, side: int, use_facet_count: bool = True) -> float:
        """|K| / (m_K |F|) for the cell on ``side`` (0 or 1) of facet ``f``."""
        k = self.facet_cells[f, side]
        if k == BOUNDARY:
            raise MeshError(f"facet {f} has no cell on side {side}")
        m = self.cell_facet_counts[k] if use_facet_count else 1
        return float(self.cell_areas[k] / (m * self.facet_lengths[f]))

    def to_dict(self) -> dict:
        out = {"vertices": self.vertices.tolist(), "cells": [c.tolist() for c in self.cells]}
        if self.cell_labels is not None:
            out["labels"] = self.cell_labels.tolist()
        if self.axonal is not None:
            out["axonal"] = self.axonal.tolist()
        return out

    def with_labels(self, labels, axonal=None) -> "PolyMesh":
        return PolyMesh(self.vertices, self.cells, labels, axonal if axonal is not None else self.axonal)


def power_mean(a: float, b: float, theta: float) -> float:
    if theta == 0:
        raise ValueError("power-mean exponent must be nonzero")
    return (0.5 * (a**theta + b**theta)) ** (1.0 / theta)


def mesh_size_on_facet(mesh: PolyMesh, f: int, theta: float, eta_f: float, use_facet_count: bool = True) -> float:
    """Facet mesh-size function: the power mean of |K_i|/(m_{K_i}|F|) divided by eta_f."""
    if mesh.facet_cells[f, 1] == BOUNDARY:
        raise MeshError(f"mesh size function is defined on interior facets only (facet {f})")
    if eta_f <= 0:
        raise ValueError("eta_f must be positive")
    r1 = mesh.facet_ratio(f, 0, use_facet_count)
    r2 = mesh.facet_ratio(f, 1, use_facet_count)
    return power_mean(r1, r2, theta) / eta_f


# -- Voronoi generation ----------------------------------------------------


def as_domain(domain) -> np.ndarray:
    """Accept (x0, y0, x1, y1) rectangles or an (n, 2) convex polygon."""
    arr = np.asarray(domain, dtype=float)
    if arr.shape == (4,):
        x0, y0, x1, y1 = arr
        arr = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) < 3:
        raise MeshError("domain must be (x0, y0, x1, y1) or an (n, 2) polygon")
    if polygon_area(arr) < 0:
        arr = arr[::-1].copy()
    if polygon_area(arr) <= 0:
        raise MeshError("domain has non-positive area")
    e = np.roll(arr, -1, axis=0) - arr
    e2 = np.roll(e, -1, axis=0)
    if np.any(e[:, 0] * e2[:, 1] - e[:, 1] * e2[:, 0] < -1e-14):
        raise MeshError("domain must be convex")
    return arr


def _halfplanes(domain: np.ndarray):
    """Inward normals n and offsets c with n . x >= c inside the domain."""
    e = np.roll(domain, -1, axis=0) - domain
    n = np.column_stack([-e[:, 1], e[:, 0]])
    n /= np.linalg.norm(n, axis=1)[:, None]
    return n, np.einsum("ij,ij->i", n, domain)


def clip_convex(poly: np.ndarray, domain: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of ``poly`` against a convex counter-clockwise domain."""
    normals, offsets = _halfplanes(domain)
    out = poly
    for n, c in zip(normals, offsets):
        if len(out) == 0:
            break
        d = out @ n - c
        res = []
        for i in range(len(out)):
            p, q = out[i], out[(i + 1) % len(out)]
            dp, dq = d[i], d[(i + 1) % len(out)]
            if dp >= 0:
                res.append(p)
            if (dp >= 0) != (dq >= 0):
                s = dp / (dp - dq)
                res.append(p + s * (q - p))
        out = np.array(res)
    return out


def _sample_in_polygon(domain: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    lo, hi = domain.min(0), domain.max(0)
    normals, offsets = _halfplanes(domain)
    pts = np.empty((0, 2))
    while len(pts) < n:
        cand = lo + (hi - lo) * rng.random((2 * n, 2))
        inside = np.all(cand @ normals.T - offsets > 0, axis=1)
        pts = np.vstack([pts, cand[inside]])
    return pts[:n]


def _reflect(points: np.ndarray, domain: np.ndarray) -> np.ndarray:
    normals, offsets = _halfplanes(domain)
    refl = [points]
    for n, c in zip(normals, offsets):
        d = points @ n - c
        refl.append(points - 2.0 * d[:, None] * n[None, :])
    return np.vstack(refl)


def voronoi_cells(seeds: np.ndarray, domain: np.ndarray) -> list[np.ndarray]:
    """Bounded Voronoi cells of ``seeds`` restricted to the convex domain.

    Seeds are mirrored across every domain edge so the cells of the original
    seeds are bounded by the domain; each cell is then clipped against the
    domain to remove roundoff overshoot.
    """
    vor = Voronoi(_reflect(seeds, domain))
    normals, offsets = _halfplanes(domain)
    margin = 1e-12 * polygon_diameter(domain)
    inside = np.all(vor.vertices @ normals.T - offsets > margin, axis=1)
    cells = []
    for i in range(len(seeds)):
        region = vor.regions[vor.point_region[i]]
        if -1 in region or len(region) < 3:
            raise MeshError(f"unbounded Voronoi region for seed {i}")
        pts = vor.vertices[region]
        ang = np.arctan2(pts[:, 1] - seeds[i, 1], pts[:, 0] - seeds[i, 0])
        pts = pts[np.argsort(ang)]
        cells.append(pts if inside[region].all() else clip_convex(pts, domain))
    return cells


def _weld(cells: list[np.ndarray], tol: float):
    """Merge coincident vertices across cells and drop degenerate edges."""
    allpts = np.vstack(cells)
    pairs = cKDTree(allpts).query_pairs(tol, output_type="ndarray")
    n = len(allpts)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n)) if len(pairs) else coo_matrix((n, n))
    _, comp = connected_components(graph, directed=False)
    uniq, inv = np.unique(comp, return_inverse=True)
    verts = np.zeros((len(uniq), 2))
    np.add.at(verts, inv, allpts)
    verts /= np.bincount(inv)[:, None]
    out, start = [], 0
    for c in cells:
        idx = inv[start:start + len(c)]
        start += len(c)
        loop = [int(i) for j, i in enumerate(idx) if i != idx[j - 1]]
        if len(loop) < 3:
            raise MeshError("cell collapsed during vertex welding")
        out.append(loop)
    return verts, out


def centroidal_energy(seeds: np.ndarray, domain: np.ndarray, cells: list[np.ndarray] | None = None) -> float:
    """Sum over cells of the integral of |x - g_i|^2 over the cell of seed g_i."""
    if cells is None:
        cells = voronoi_cells(seeds, domain)
    total = 0.0
    for g, pts in zip(seeds, cells):
        # exact second moment of each fan triangle (g, p_j, p_{j+1})
        p, q = pts - g, np.roll(pts, -1, axis=0) - g
        area = 0.5 * (p[:, 0] * q[:, 1] - p[:, 1] * q[:, 0])
        total += float((area * ((p**2).sum(1) + (q**2).sum(1) + (p * q).sum(1)) / 6.0).sum())
    return total


def lloyd_sweep(seeds: np.ndarray, domain: np.ndarray) -> np.ndarray:
    return np.array([polygon_centroid(c) for c in voronoi_cells(seeds, domain)])


def generate_voronoi(domain, n_cells: int, lloyd_iters: int = 50, seed: int = 0, max_retries: int = 5) -> PolyMesh:
    """Clipped Voronoi mesh of a convex domain after ``lloyd_iters`` Lloyd sweeps."""
    dom = as_domain(domain)
    if n_cells == 1:
        return PolyMesh(dom, [list(range(len(dom)))])
    if n_cells < 3:
        raise MeshError("n_cells must be 1 or at least 3")
    rng = np.random.default_rng(seed)
    scale = polygon_diameter(dom)
    seeds = _sample_in_polygon(dom, n_cells, rng)
    for attempt in range(max_retries + 1):
        try:
            if len(cKDTree(seeds).query_pairs(1e-12 * scale)):
                raise MeshError("duplicate generators")
            s = seeds
            for _ in range(lloyd_iters):
                s = lloyd_sweep(s, dom)
            verts, cells = _weld(voronoi_cells(s, dom), 1e-9 * scale)
            mesh = PolyMesh(verts, cells)
            break
        except (MeshError, QhullError) as exc:
            if attempt == max_retries:
                raise MeshError(f"Voronoi generation failed after {max_retries} retries: {exc}") from exc
            logger.warning("Voronoi generation retry %d: %s", attempt + 1, exc)
            seeds = seeds + 1e-6 * scale * rng.standard_normal(seeds.shape)
            seeds = np.array([clip_point(p, dom) for p in seeds])
    dom_area = polygon_area(dom)
    if abs(mesh.area - dom_area) > 1e-10 * dom_area:
        raise MeshError(f"cell areas sum to {mesh.area}, domain area is {dom_area}")
    return mesh


def clip_point(p: np.ndarray, domain: np.ndarray) -> np.ndarray:
    normals, offsets = _halfplanes(domain)
    for n, c in zip(normals, offsets):
        d = p @ n - c
        if d <= 0:
            p = p + (1e-9 - d) * n
    return p
