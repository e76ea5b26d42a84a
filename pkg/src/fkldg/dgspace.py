"""Broken polynomial spaces on polygonal meshes.

Each cell starts from the products ``P_a(xi) P_b(eta)``, ``a + b <= ell``, of
Legendre polynomials in the coordinates of the cell's bounding box mapped to
``[-1, 1]^2``, orthonormalized by modified Gram-Schmidt against the cell
quadrature. The scalar space has
``n_loc = (ell+1)(ell+2)/2`` functions per cell; the vector space stores the
x-component block followed by the y-component block for every cell.

Volume data is held in padded per-cell arrays: ``qpts[K]`` has ``nq_max``
rows and padding points carry zero weight.
"""

from __future__ import annotations

import logging
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .polymesh import PolyMesh, polygon_area

logger = logging.getLogger(__name__)

MAX_DEGREE = 8


def monomial_exponents(degree: int) -> np.ndarray:
    return np.array([(d - j, j) for d in range(degree + 1) for j in range(d + 1)], dtype=int)


@lru_cache(maxsize=None)
def triangle_rule(n: int):
    """Collapsed Gauss-Jacobi rule on the reference triangle (0,0),(1,0),(0,1).

    ``n`` points per direction; exact for total degree ``2n - 1``; all weights
    positive. Weights sum to 1/2.
    """
    xg, wg = roots_legendre(n)
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    a = 0.5 * (xg + 1.0)
    b = 0.5 * (xj + 1.0)
    s = np.outer(a, 1.0 - b)  # s = a (1 - b)
    t = np.outer(np.ones(n), b)
    w = np.outer(0.5 * wg, 0.25 * wj)
    return np.column_stack([s.ravel(), t.ravel()]), w.ravel()


@lru_cache(maxsize=None)
def line_rule(n: int):
    """Gauss-Legendre rule on [0, 1]."""
    x, w = roots_legendre(n)
    return 0.5 * (x + 1.0), 0.5 * w


def triangulate(pts: np.ndarray, centroid: np.ndarray) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Fan triangles from the centroid; ear clipping if the fan is not valid."""
    fan = [(centroid, pts[i], pts[(i + 1) % len(pts)]) for i in range(len(pts))]
    if all(_tri_area(*t) > 0 for t in fan):
        return fan
    return _ear_clip(pts)


def _tri_area(a, b, c) -> float:
    return 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))


def _ear_clip(pts: np.ndarray):
    idx = list(range(len(pts)))
    tris = []
    while len(idx) > 3:
        for k in range(len(idx)):
            i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % len(idx)]
            a, b, c = pts[i0], pts[i1], pts[i2]
            if _tri_area(a, b, c) <= 0:
                continue
            others = [pts[j] for j in idx if j not in (i0, i1, i2)]
            if any(_tri_area(a, b, p) >= 0 and _tri_area(b, c, p) >= 0 and _tri_area(c, a, p) >= 0 for p in others):
                continue
            tris.append((a, b, c))
            idx.pop(k)
            break
        else:
            raise ValueError("ear clipping failed")
    tris.append(tuple(pts[j] for j in idx))
    return tris


def _legendre(t: np.ndarray, degree: int):
    """Legendre polynomials P_0..P_degree and their derivatives at ``t``; shape (..., degree + 1)."""
    P = [np.ones_like(t), t]
    dP = [np.zeros_like(t), np.ones_like(t)]
    for n in range(1, degree):
        P.append(((2 * n + 1) * t * P[n] - n * P[n - 1]) / (n + 1))
        dP.append(dP[n - 1] + (2 * n + 1) * P[n])
    return np.stack(P[: degree + 1], axis=-1), np.stack(dP[: degree + 1], axis=-1)


class DgSpace:
    """Broken P_ell space with quadrature, orthonormal bases and projections."""

    def __init__(self, mesh: PolyMesh, degree: int, quad_order: int | None = None):
        if not 1 <= degree <= MAX_DEGREE:
            raise ValueError(f"degree must be in [1, {MAX_DEGREE}], got {degree}")
        self.mesh = mesh
        self.degree = degree
        self.exponents = monomial_exponents(degree)
        self.n_loc = len(self.exponents)
        self.n_cells = mesh.n_cells
        self.n_scalar = self.n_cells * self.n_loc
        self.n_vector = 2 * self.n_scalar
        self.quad_order = 2 * degree + 1 if quad_order is None else quad_order
        self.centers = mesh.cell_centroids.copy()
        lo = np.array([mesh.cell_points(k).min(axis=0) for k in range(mesh.n_cells)])
        hi = np.array([mesh.cell_points(k).max(axis=0) for k in range(mesh.n_cells)])
        self.box_centers = 0.5 * (lo + hi)
        self.box_halves = 0.5 * (hi - lo)
        self._build_volume_quadrature()
        self._orthonormalize()
        self._build_facet_quadrature()

    # -- offsets ----------------------------------------------------------

    def scalar_slice(self, k: int) -> slice:
        return slice(k * self.n_loc, (k + 1) * self.n_loc)

    def vector_slice(self, k: int) -> slice:
        return slice(2 * k * self.n_loc, 2 * (k + 1) * self.n_loc)

    @property
    def global_offsets(self) -> np.ndarray:
        return np.arange(self.n_cells + 1) * self.n_loc

    # -- construction -----------------------------------------------------

    def _build_volume_quadrature(self):
        ref_pts, ref_w = triangle_rule(self.quad_order // 2 + 1)
        pts_cells, w_cells = [], []
        for k in range(self.n_cells):
            pts = self.mesh.cell_points(k)
            P, W = [], []
            for a, b, c in triangulate(pts, self.centers[k]):
                area2 = 2.0 * _tri_area(a, b, c)
                P.append(a + np.outer(ref_pts[:, 0], b - a) + np.outer(ref_pts[:, 1], c - a))
                W.append(area2 * ref_w)
            pts_cells.append(np.vstack(P))
            w_cells.append(np.concatenate(W))
        nq = max(len(w) for w in w_cells)
        self.qpts = np.empty((self.n_cells, nq, 2))
        self.qw = np.zeros((self.n_cells, nq))
        for k, (p, w) in enumerate(zip(pts_cells, w_cells)):
            self.qpts[k, : len(w)] = p
            self.qpts[k, len(w):] = self.centers[k]
            self.qw[k, : len(w)] = w

    def _monomials(self, k, x: np.ndarray):
        """Legendre products P_a(xi) P_b(eta) on the bounding box of cell(s) ``k``, with gradients."""
        k = np.asarray(k)
        c = self.box_centers[k]
        r = self.box_halves[k]
        if k.ndim:
            c, r = c[:, None, :], r[:, None, :]
        xi = (x[..., 0] - c[..., 0]) / r[..., 0]
        eta = (x[..., 1] - c[..., 1]) / r[..., 1]
        Lx, dLx = _legendre(xi, self.degree)
        Ly, dLy = _legendre(eta, self.degree)
        ex, ey = self.exponents[:, 0], self.exponents[:, 1]
        val = Lx[..., ex] * Ly[..., ey]
        dx = dLx[..., ex] * Ly[..., ey] / r[..., 0:1]
        dy = Lx[..., ex] * dLy[..., ey] / r[..., 1:2]
        return val, np.stack([dx, dy], axis=-1)

    def _orthonormalize(self):
        mono, dmono = self._monomials(np.arange(self.n_cells), self.qpts)
        # modified Gram-Schmidt in the quadrature inner product, run twice
        V = mono.transpose(0, 2, 1).copy()  # (K, n, q) values of the working basis
        T = np.broadcast_to(np.eye(self.n_loc), (self.n_cells, self.n_loc, self.n_loc)).copy()
        for i in range(self.n_loc):
            for _ in range(2):
                for j in range(i):
                    r = np.einsum("kq,kq,kq->k", self.qw, V[:, i], V[:, j])
                    V[:, i] -= r[:, None] * V[:, j]
                    T[:, i] -= r[:, None] * T[:, j]
            nrm = np.sqrt(np.einsum("kq,kq,kq->k", self.qw, V[:, i], V[:, i]))
            if np.any(nrm <= 0) or not np.all(np.isfinite(nrm)):
                bad = int(np.flatnonzero(~(nrm > 0))[0])
                raise np.linalg.LinAlgError(f"basis function {i} degenerates in cell {bad}")
            V[:, i] /= nrm[:, None]
            T[:, i] /= nrm[:, None]
        self.transform = T  # basis_i = sum_j T[i, j] seed_j
        self.phi = np.einsum("kqj,kij->kqi", mono, T)
        self.dphi = np.einsum("kqjd,kij->kqid", dmono, T)
        self.mass = np.einsum("kq,kqi,kqj->kij", self.qw, self.phi, self.phi)
        cond = np.linalg.cond(self.mass)
        logger.debug("local mass condition numbers: max %.3e", cond.max())
        if not np.all(np.isfinite(cond)):
            bad = int(np.flatnonzero(~np.isfinite(cond))[0])
            raise np.linalg.LinAlgError(f"singular local mass matrix in cell {bad}")
        self.mass_cond = cond

    def _build_facet_quadrature(self):
        m = self.mesh
        s, w = line_rule(self.degree + 1)
        a = m.vertices[m.facet_vertices[:, 0]]
        b = m.vertices[m.facet_vertices[:, 1]]
        self.fpts = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
        self.fw = w[None, :] * m.facet_lengths[:, None]
        k1 = m.facet_cells[:, 0]
        self.fphi1 = self.basis(k1, self.fpts)
        k2 = np.where(m.facet_cells[:, 1] >= 0, m.facet_cells[:, 1], k1)
        self.fphi2 = self.basis(k2, self.fpts)

    # -- evaluation -------------------------------------------------------

    def basis(self, k, x: np.ndarray) -> np.ndarray:
        """Basis values of cell(s) ``k`` at points ``x``; shape (..., n_loc)."""
        mono, _ = self._monomials(k, np.asarray(x, dtype=float))
        k = np.asarray(k)
        T = self.transform[k]
        return np.einsum("...qj,...ij->...qi", mono, T) if k.ndim else mono @ T.T

    def basis_grad(self, k, x: np.ndarray) -> np.ndarray:
        _, dmono = self._monomials(k, np.asarray(x, dtype=float))
        k = np.asarray(k)
        T = self.transform[k]
        return np.einsum("...qjd,...ij->...qid", dmono, T) if k.ndim else np.einsum("...jd,ij->...id", dmono, T)

    def cell_coeffs(self, coeffs: np.ndarray) -> np.ndarray:
        return np.asarray(coeffs).reshape(self.n_cells, self.n_loc)

    def values_at_quad(self, coeffs: np.ndarray) -> np.ndarray:
        return np.einsum("kqi,ki->kq", self.phi, self.cell_coeffs(coeffs))

    def grads_at_quad(self, coeffs: np.ndarray) -> np.ndarray:
        return np.einsum("kqid,ki->kqd", self.dphi, self.cell_coeffs(coeffs))

    def vector_values_at_quad(self, coeffs: np.ndarray) -> np.ndarray:
        c = np.asarray(coeffs).reshape(self.n_cells, 2, self.n_loc)
        return np.einsum("kqi,kdi->kqd", self.phi, c)

    def eval_field(self, coeffs: np.ndarray, cell: int, point) -> float:
        p = np.asarray(point, dtype=float).reshape(1, 2)
        return float(self.basis(cell, p)[0] @ self.cell_coeffs(coeffs)[cell])

    def eval_gradient(self, coeffs: np.ndarray, cell: int, point) -> np.ndarray:
        p = np.asarray(point, dtype=float).reshape(1, 2)
        return self.basis_grad(cell, p)[0].T @ self.cell_coeffs(coeffs)[cell]

    def eval_cells(self, coeffs: np.ndarray, cells: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Values at ``points[i]`` using the expansion of ``cells[i]``."""
        cells = np.asarray(cells)
        vals = self.basis(cells, np.asarray(points)[:, None, :])[:, 0, :]
        return np.einsum("ni,ni->n", vals, self.cell_coeffs(coeffs)[cells])

    # -- integration and projection ---------------------------------------

    def integrate(self, values: np.ndarray) -> float:
        """Integral of a field given by its values at the volume quadrature points."""
        return float((self.qw * values).sum())

    def load(self, values: np.ndarray) -> np.ndarray:
        """Load vector (f, psi_i) from values of f at the quadrature points."""
        return np.einsum("kq,kq,kqi->ki", self.qw, values, self.phi).ravel()

    def load_function(self, f) -> np.ndarray:
        return self.load(f(self.qpts[..., 0], self.qpts[..., 1]))

    def solve_mass(self, load: np.ndarray) -> np.ndarray:
        b = self.cell_coeffs(load)
        return np.linalg.solve(self.mass, b[..., None])[..., 0].ravel()

    def project_values(self, values: np.ndarray) -> np.ndarray:
        return self.solve_mass(self.load(values))

    def project_scalar(self, f) -> np.ndarray:
        """L2 projection of a vectorized callable ``f(x, y)``."""
        return self.solve_mass(self.load_function(f))

    def scalar_mass_blocks(self) -> np.ndarray:
        return self.mass

    def l2_norm(self, coeffs: np.ndarray) -> float:
        c = self.cell_coeffs(coeffs)
        return float(np.sqrt(np.einsum("ki,kij,kj->", c, self.mass, c)))


def build_space(mesh: PolyMesh, degree: int) -> DgSpace:
    return DgSpace(mesh, degree)


def monomial_integral_green(pts: np.ndarray, a: int, b: int) -> float:
    """Integral of x^a y^b over a polygon via the boundary formula
    int x^a y^b dA = 1/(a+1) * oint x^(a+1) y^b dy, with exact Gauss rules per edge."""
    s, w = line_rule((a + b + 2) // 2 + 1)
    total = 0.0
    for i in range(len(pts)):
        p, q = pts[i], pts[(i + 1) % len(pts)]
        x = p[0] + s * (q[0] - p[0])
        y = p[1] + s * (q[1] - p[1])
        total += float((w * x ** (a + 1) * y**b).sum() * (q[1] - p[1]))
    return total / (a + 1)


def cell_area_check(space: DgSpace) -> np.ndarray:
    """Relative deviation of quadrature weight sums from polygon areas."""
    areas = np.array([polygon_area(space.mesh.cell_points(k)) for k in range(space.n_cells)])
    return np.abs(space.qw.sum(1) - areas) / areas
