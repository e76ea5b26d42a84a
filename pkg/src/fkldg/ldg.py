"""Coefficient fields and the sparse LDG operators.

Matrices (rows = test functions, columns = trial functions):

* ``M_I``     vector mass, ``(z, phi)``
* ``M_D``     D-weighted vector mass, ``(D z, phi)``
* ``M_alpha`` alpha-weighted scalar mass
* ``B``       ``(grad_h w, phi) - sum_F ([[w]]_N, {phi}_{1-gamma_F})_F``
* ``J``       ``sum_F (hfun^{-1} [[w]]_N, [[psi]]_N)_F``
* ``A_LDG``   ``M_alpha + B^T M_I^{-1} M_D M_I^{-1} B + J``
* ``C``       ``M_D M_I^{-1} B``

On an interior facet with cells ``K1 < K2`` and normal ``n`` out of ``K1``:
``[[w]]_N = (w1 - w2) n`` and ``{phi}_g = (1 - g) phi1 + g phi2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .dgspace import DgSpace
from .polymesh import PolyMesh


@dataclass
class CoeffField:
    """Piecewise-constant reaction rate and diffusion tensor, one value per cell."""

    alpha: np.ndarray
    diffusion: np.ndarray
    axonal_dir: np.ndarray | None = None
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.diffusion = np.asarray(self.diffusion, dtype=float)
        if np.any(self.alpha <= 0):
            raise ValueError("alpha must be strictly positive")
        if self.diffusion.shape != (len(self.alpha), 2, 2):
            raise ValueError("diffusion must have shape (n_cells, 2, 2)")
        if not np.allclose(self.diffusion, self.diffusion.transpose(0, 2, 1), rtol=0, atol=1e-14 * np.abs(self.diffusion).max()):
            raise ValueError("diffusion tensors must be symmetric")
        if self.D0 <= 0:
            raise ValueError(f"diffusion is not uniformly positive definite (min eigenvalue {self.D0})")
        if self.axonal_dir is not None:
            a = np.asarray(self.axonal_dir, dtype=float)
            if np.any(np.abs(np.linalg.norm(a, axis=1) - 1.0) > 1e-12):
                raise ValueError("axonal directions must be unit vectors")
            self.axonal_dir = a

    @property
    def D0(self) -> float:
        return float(np.linalg.eigvalsh(self.diffusion)[:, 0].min())

    @property
    def alpha_max(self) -> float:
        return float(self.alpha.max())

    @classmethod
    def constant(cls, mesh: PolyMesh, alpha: float, d: float | np.ndarray) -> "CoeffField":
        D = np.asarray(d, dtype=float)
        if D.ndim == 0:
            D = float(D) * np.eye(2)
        return cls(np.full(mesh.n_cells, float(alpha)), np.broadcast_to(D, (mesh.n_cells, 2, 2)).copy(), labels=mesh.cell_labels)

    @classmethod
    def regions(
        cls,
        mesh: PolyMesh,
        alpha_by_label: dict[int, float],
        d_ext: float,
        d_axn_by_label: dict[int, float],
        axonal=None,
    ) -> "CoeffField":
        """Labeled coefficients: D = d_ext I + d_axn a (x) a with per-label d_axn."""
        if mesh.cell_labels is None:
            raise ValueError("mesh has no cell labels")
        labels = mesh.cell_labels
        alpha = np.array([alpha_by_label[int(l)] for l in labels])
        d_axn = np.array([d_axn_by_label.get(int(l), 0.0) for l in labels])
        if axonal is None:
            axonal = mesh.axonal if mesh.axonal is not None else np.tile([1.0, 0.0], (mesh.n_cells, 1))
        a = np.asarray(axonal, dtype=float)
        if a.ndim == 1:
            a = np.tile(a, (mesh.n_cells, 1))
        a = a / np.linalg.norm(a, axis=1)[:, None]
        D = d_ext * np.eye(2)[None] + d_axn[:, None, None] * np.einsum("ki,kj->kij", a, a)
        return cls(alpha, D, axonal_dir=a, labels=labels)


def facet_weights(delta1, delta2, degree: int, eta0: float):
    """Weights gamma_F and penalties eta_F from the normal diffusivities of both neighbors."""
    delta1 = np.asarray(delta1, dtype=float)
    delta2 = np.asarray(delta2, dtype=float)
    gamma = delta1 / (delta1 + delta2)
    eta = eta0 * degree**2 * 2.0 * delta1 * delta2 / (delta1 + delta2)
    return gamma, eta


def blockdiag(blocks: np.ndarray) -> sp.csr_matrix:
    """CSR matrix with the (nb, r, c) array ``blocks`` on the block diagonal."""
    nb, r, c = blocks.shape
    rows = (np.arange(nb)[:, None, None] * r + np.arange(r)[None, :, None]) + np.zeros((1, 1, c), dtype=int)
    cols = (np.arange(nb)[:, None, None] * c + np.arange(c)[None, None, :]) + np.zeros((1, r, 1), dtype=int)
    return sp.csr_matrix((blocks.ravel(), (rows.ravel(), cols.ravel())), shape=(nb * r, nb * c))


def tensor_blocks(D: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Per-cell blocks [[D00 S, D01 S], [D10 S, D11 S]] for vector unknowns."""
    nc, n = S.shape[0], S.shape[1]
    return np.einsum("kab,kij->kaibj", D, S).reshape(nc, 2 * n, 2 * n)


@dataclass
class LdgSystem:
    space: DgSpace
    coeffs: CoeffField
    theta: float
    eta0: float
    use_facet_count: bool
    M_I: sp.csr_matrix
    M_I_blocks: np.ndarray
    M_I_inv_blocks: np.ndarray
    M_D: sp.csr_matrix
    B: sp.csr_matrix
    J: sp.csr_matrix
    M_alpha: sp.csr_matrix
    A_LDG: sp.csr_matrix
    C: sp.csr_matrix
    facet_data: dict = field(default_factory=dict)

    @property
    def M_I_inv(self) -> sp.csr_matrix:
        return blockdiag(self.M_I_inv_blocks)

    def apply_M_I_inv(self, v: np.ndarray) -> np.ndarray:
        nb, r, _ = self.M_I_inv_blocks.shape
        return np.einsum("kij,kj->ki", self.M_I_inv_blocks, v.reshape(nb, r)).ravel()

    def matrices(self) -> dict[str, sp.csr_matrix]:
        return {"M_I": self.M_I, "M_D": self.M_D, "B": self.B, "J": self.J, "M_alpha": self.M_alpha, "A_LDG": self.A_LDG, "C": self.C}


def apply_ldg_gradient(sys: LdgSystem, W: np.ndarray) -> np.ndarray:
    """Coefficients of grad_LDG w, i.e. M_I^{-1} B W."""
    return sys.apply_M_I_inv(sys.B @ W)


def assemble(space: DgSpace, coeffs: CoeffField, theta: float = -1.0, eta0: float = 1.0, use_facet_count: bool = False) -> LdgSystem:
    mesh = space.mesh
    nc, n = space.n_cells, space.n_loc
    if len(coeffs.alpha) != nc:
        raise ValueError("coefficient field does not match the mesh")
    D = coeffs.diffusion

    mass = space.mass
    M_I_blocks = tensor_blocks(np.broadcast_to(np.eye(2), (nc, 2, 2)), mass)
    M_I_inv_blocks = np.linalg.inv(M_I_blocks)
    M_D = blockdiag(tensor_blocks(D, mass))
    M_alpha = blockdiag(coeffs.alpha[:, None, None] * mass)

    # volume part of B: rows (K, d, i), cols (K, j)
    Bvol = np.einsum("kq,kqi,kqjd->kdij", space.qw, space.phi, space.dphi).reshape(nc, 2 * n, n)
    rows, cols, vals = [], [], []
    r0 = (np.arange(nc)[:, None, None] * 2 * n + np.arange(2 * n)[None, :, None]) + np.zeros((1, 1, n), dtype=int)
    c0 = (np.arange(nc)[:, None, None] * n + np.arange(n)[None, None, :]) + np.zeros((1, 2 * n, 1), dtype=int)
    rows.append(r0.ravel()); cols.append(c0.ravel()); vals.append(Bvol.ravel())

    fi = mesh.interior_facets
    k1 = mesh.facet_cells[fi, 0]
    k2 = mesh.facet_cells[fi, 1]
    nrm = mesh.facet_normals[fi]
    delta1 = np.einsum("fi,fij,fj->f", nrm, D[k1], nrm)
    delta2 = np.einsum("fi,fij,fj->f", nrm, D[k2], nrm)
    gamma, eta = facet_weights(delta1, delta2, space.degree, eta0)
    areas, counts, lengths = mesh.cell_areas, mesh.cell_facet_counts, mesh.facet_lengths[fi]
    m1 = counts[k1] if use_facet_count else 1.0
    m2 = counts[k2] if use_facet_count else 1.0
    r1 = areas[k1] / (m1 * lengths)
    r2 = areas[k2] / (m2 * lengths)
    if theta == 0:
        raise ValueError("theta must be nonzero")
    hfun = (0.5 * (r1**theta + r2**theta)) ** (1.0 / theta) / eta

    fw = space.fw[fi]
    phis = (space.fphi1[fi], space.fphi2[fi])
    cells = (k1, k2)
    sign = (1.0, -1.0)
    avg = (gamma, 1.0 - gamma)  # weights of {phi}_{1-gamma}
    jr, jc, jv = [], [], []
    nf = len(fi)
    for a in range(2):  # test side
        for b in range(2):  # trial side
            Fab = np.einsum("fq,fqi,fqj->fij", fw, phis[a], phis[b])
            # B facet term: -sign_b * avg_a * n_d * F_ab
            blk = -(sign[b] * avg[a])[:, None, None, None] * nrm[:, :, None, None] * Fab[:, None, :, :]
            rr = cells[a][:, None, None, None] * 2 * n + np.arange(2)[None, :, None, None] * n + np.arange(n)[None, None, :, None]
            cc = cells[b][:, None, None, None] * n + np.arange(n)[None, None, None, :]
            rr, cc = np.broadcast_arrays(rr, cc)
            rows.append(rr.ravel()); cols.append(cc.ravel()); vals.append(np.broadcast_to(blk, (nf, 2, n, n)).ravel())
            jb = (sign[a] * sign[b] / hfun)[:, None, None] * Fab
            jrr = cells[a][:, None, None] * n + np.arange(n)[None, :, None]
            jcc = cells[b][:, None, None] * n + np.arange(n)[None, None, :]
            jrr, jcc = np.broadcast_arrays(jrr, jcc)
            jr.append(jrr.ravel()); jc.append(jcc.ravel()); jv.append(jb.ravel())

    B = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(space.n_vector, space.n_scalar))
    if jr:
        J = sp.csr_matrix((np.concatenate(jv), (np.concatenate(jr), np.concatenate(jc))), shape=(space.n_scalar, space.n_scalar))
    else:
        J = sp.csr_matrix((space.n_scalar, space.n_scalar))
    M_I_inv = blockdiag(M_I_inv_blocks)
    C = (M_D @ (M_I_inv @ B)).tocsr()
    A = (M_alpha + B.T @ (M_I_inv @ C) + J).tocsr()
    for mat in (B, J, C, A):
        mat.sum_duplicates()
    return LdgSystem(
        space=space,
        coeffs=coeffs,
        theta=theta,
        eta0=eta0,
        use_facet_count=use_facet_count,
        M_I=blockdiag(M_I_blocks),
        M_I_blocks=M_I_blocks,
        M_I_inv_blocks=M_I_inv_blocks,
        M_D=M_D,
        B=B,
        J=J,
        M_alpha=M_alpha,
        A_LDG=A,
        C=C,
        facet_data={"facets": fi, "gamma": gamma, "eta": eta, "hfun": hfun},
    )
