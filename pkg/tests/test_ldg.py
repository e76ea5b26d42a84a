import numpy as np
import pytest
import scipy.sparse as sp

from fkldg.dgspace import DgSpace
from fkldg.ldg import CoeffField, apply_ldg_gradient, assemble, facet_weights
from fkldg.polymesh import PolyMesh

from conftest import square_mesh
from oracles import divergence_form


def test_facet_weights_symmetric_case():
    g, e = facet_weights(2.0, 2.0, 3, 1.5)
    assert g == pytest.approx(0.5)
    assert e == pytest.approx(1.5 * 9 * 2.0)


def test_facet_weights_substitution():
    g, e = facet_weights(1.0, 3.0, 2, 1.0)
    assert g == pytest.approx(0.25)
    assert e == pytest.approx(6.0)


def test_isotropic_penalty_on_all_facets(vmesh12):
    space = DgSpace(vmesh12, 2)
    sys = assemble(space, CoeffField.constant(vmesh12, 1.0, 1e-3), eta0=2.0)
    np.testing.assert_allclose(sys.facet_data["eta"], 2.0 * 4 * 1e-3, rtol=1e-14)
    np.testing.assert_allclose(sys.facet_data["gamma"], 0.5, rtol=1e-14)


def test_coeff_field_validation(vmesh12):
    n = vmesh12.n_cells
    with pytest.raises(ValueError, match="alpha"):
        CoeffField(np.zeros(n), np.tile(np.eye(2), (n, 1, 1)))
    with pytest.raises(ValueError, match="symmetric"):
        CoeffField(np.ones(n), np.tile([[1.0, 0.5], [0.0, 1.0]], (n, 1, 1)))
    with pytest.raises(ValueError, match="positive definite"):
        CoeffField(np.ones(n), np.tile([[1.0, 2.0], [2.0, 1.0]], (n, 1, 1)))


def test_regions_build_anisotropic_tensor(vmesh12):
    labels = (vmesh12.cell_centroids[:, 0] > 0.5).astype(int)
    m = vmesh12.with_labels(labels)
    cf = CoeffField.regions(m, {0: 0.45, 1: 0.9}, 8.0, {1: 80.0}, axonal=[1.0, 0.0])
    for k in range(m.n_cells):
        expect = np.diag([88.0, 8.0]) if labels[k] else 8.0 * np.eye(2)
        np.testing.assert_allclose(cf.diffusion[k], expect)
    assert cf.D0 == pytest.approx(8.0)
    assert cf.alpha_max == pytest.approx(0.9)


def test_a_ldg_symmetric_and_identity(aniso_system):
    space, cf, sys = aniso_system
    A = sys.A_LDG.toarray()
    assert np.abs(A - A.T).max() <= 1e-12 * np.abs(A).max()
    Minv = np.linalg.inv(sys.M_I.toarray())
    ref = sys.M_alpha.toarray() + sys.B.T.toarray() @ Minv @ sys.M_D.toarray() @ Minv @ sys.B.toarray() + sys.J.toarray()
    assert np.linalg.norm(A - ref) <= 1e-10 * np.linalg.norm(ref)


def test_a_ldg_coercive(aniso_system, rng):
    _, _, sys = aniso_system
    for _ in range(20):
        W = rng.normal(size=sys.A_LDG.shape[0])
        assert W @ (sys.A_LDG @ W) > 0


def test_mass_matrices_block_structure(aniso_system):
    space, cf, sys = aniso_system
    n = space.n_loc
    for M in (sys.M_I, sys.M_D):
        coo = M.tocoo()
        assert np.all(coo.row // (2 * n) == coo.col // (2 * n))
    for M in (sys.M_I, sys.M_D, sys.M_alpha, sys.J):
        d = M.toarray()
        assert np.abs(d - d.T).max() < 1e-13 * max(np.abs(d).max(), 1.0)
    assert np.linalg.eigvalsh(sys.J.toarray()).min() > -1e-12 * np.abs(sys.J).max()


def test_dg_norm_identity_by_direct_quadrature(aniso_system, rng):
    """W^T A W = |alpha^1/2 w|^2 + |D^1/2 grad_LDG w|^2 + sum_F |h^-1/2 [[w]]|^2."""
    space, cf, sys = aniso_system
    mesh = space.mesh
    W = rng.normal(size=space.n_scalar)
    w = space.values_at_quad(W)
    G = apply_ldg_gradient(sys, W)
    g = space.vector_values_at_quad(G)
    vol = np.sum(space.qw * cf.alpha[:, None] * w**2)
    vol += np.sum(space.qw * np.einsum("kqa,kab,kqb->kq", g, cf.diffusion, g))
    jump = 0.0
    for i, f in enumerate(sys.facet_data["facets"]):
        k1, k2 = mesh.facet_cells[f]
        pts = space.fpts[f]
        d = space.eval_cells(W, np.full(len(pts), k1), pts) - space.eval_cells(W, np.full(len(pts), k2), pts)
        jump += np.sum(space.fw[f] * d**2) / sys.facet_data["hfun"][i]
    assert W @ (sys.A_LDG @ W) == pytest.approx(vol + jump, rel=1e-10)


def test_adjointness(aniso_system, rng):
    """(div_LDG r, psi) = -(r, grad_LDG psi), with the gradient side read off B."""
    space, _, sys = aniso_system
    for _ in range(10):
        W = rng.normal(size=sys.B.shape[1])
        R = rng.normal(size=sys.B.shape[0])
        grad_form = -(R @ (sys.B @ W))
        div_form = divergence_form(space, sys, R, W)
        assert abs(div_form - grad_form) <= 1e-12 * max(1.0, abs(grad_form))


def test_single_cell_has_no_facet_terms():
    m = square_mesh()
    space = DgSpace(m, 2)
    sys = assemble(space, CoeffField.constant(m, 1.0, 1.0))
    assert sys.J.nnz == 0 or np.abs(sys.J.toarray()).max() == 0.0
    # B is the plain gradient moment matrix
    ref = np.einsum("kq,kqi,kqjd->kdij", space.qw, space.phi, space.dphi).reshape(2 * space.n_loc, space.n_loc)
    np.testing.assert_allclose(sys.B.toarray(), ref, atol=1e-14)


def test_constant_field_has_zero_jump(aniso_system):
    space, _, sys = aniso_system
    W = space.project_scalar(lambda x, y: 3.0 + 0 * x)
    assert np.abs(sys.J @ W).max() < 1e-11
    assert np.abs(apply_ldg_gradient(sys, W)).max() < 1e-11


def test_linear_field_gradient_exact(aniso_system):
    space, _, sys = aniso_system
    W = space.project_scalar(lambda x, y: x + 0 * y)
    g = space.vector_values_at_quad(apply_ldg_gradient(sys, W))
    np.testing.assert_allclose(g[..., 0], 1.0, atol=1e-12)
    np.testing.assert_allclose(g[..., 1], 0.0, atol=1e-12)
    assert np.abs(apply_ldg_gradient(sys, np.zeros_like(W))).max() == 0.0


def test_piecewise_constant_jump_lifting_sign():
    """Two unit squares, w = 1 on the left and 0 on the right, D = I.

    The lifting is -sum_F ([[w]] n, {phi}_{1-gamma}); with gamma = 1/2 and
    n = (1, 0) the x-gradient has mean -1/2 on each cell.
    """
    m = square_mesh(2, 1)
    space = DgSpace(m, 1)
    sys = assemble(space, CoeffField.constant(m, 1.0, 1.0))
    W = space.project_values(np.where(np.arange(2)[:, None] == 0, 1.0, 0.0) + 0 * space.qw)
    g = space.vector_values_at_quad(apply_ldg_gradient(sys, W))
    for k in range(2):
        mean_gx = np.sum(space.qw[k] * g[k, :, 0]) / m.cell_areas[k]
        mean_gy = np.sum(space.qw[k] * g[k, :, 1]) / m.cell_areas[k]
        assert mean_gx == pytest.approx(-0.5, abs=1e-13)
        assert mean_gy == pytest.approx(0.0, abs=1e-13)


def test_c_operator(aniso_system):
    _, _, sys = aniso_system
    Minv = sp.csr_matrix(np.linalg.inv(sys.M_I.toarray()))
    ref = (sys.M_D @ Minv @ sys.B).toarray()
    np.testing.assert_allclose(sys.C.toarray(), ref, atol=1e-12 * np.abs(ref).max())
