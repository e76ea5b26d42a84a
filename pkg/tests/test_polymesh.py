import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fkldg.polymesh import (
    BOUNDARY,
    MeshError,
    PolyMesh,
    centroidal_energy,
    generate_voronoi,
    lloyd_sweep,
    mesh_size_on_facet,
    power_mean,
    voronoi_cells,
)

from conftest import square_mesh


def test_single_square_cell():
    m = square_mesh()
    assert m.n_cells == 1
    assert len(m.boundary_facets) == 4 and len(m.interior_facets) == 0
    assert m.area == pytest.approx(1.0)


def test_two_squares_share_one_facet():
    m = square_mesh(2, 1)
    assert len(m.interior_facets) == 1
    assert len(m.boundary_facets) == 6
    f = m.facet(int(m.interior_facets[0]))
    assert f.kind == "interior"
    assert f.cells == (0, 1)
    np.testing.assert_allclose(f.unit_normal, [1.0, 0.0], atol=1e-15)


def test_self_intersecting_cell_is_named():
    verts = [(0, 0), (1, 1), (1, 0), (0, 1)]
    with pytest.raises(MeshError, match="cell 0"):
        PolyMesh(verts, [[0, 1, 2, 3]])


def test_clockwise_cell_rejected():
    with pytest.raises(MeshError):
        PolyMesh([(0, 0), (0, 1), (1, 1), (1, 0)], [[0, 1, 2, 3]])


def test_label_count_mismatch():
    with pytest.raises(MeshError, match="labels"):
        PolyMesh([(0, 0), (1, 0), (1, 1), (0, 1)], [[0, 1, 2, 3]], labels=[0, 1])


def test_one_generator_gives_the_domain():
    m = generate_voronoi((0, 0, 1, 1), 1)
    assert m.n_cells == 1 and m.area == pytest.approx(1.0, abs=1e-14)


def test_hundred_cells_partition_unit_square():
    m = generate_voronoi((0, 0, 1, 1), 100, 50, seed=7)
    assert m.n_cells == 100
    assert abs(m.cell_areas.sum() - 1.0) <= 1e-10


def test_wave_domain_mesh_size_order_of_magnitude():
    m = generate_voronoi((0, 0, 3, 1), 50, 50, seed=1)
    assert 0.2 < m.h < 0.8


def test_generation_is_deterministic():
    a = generate_voronoi((0, 0, 2, 1), 40, 10, seed=5)
    b = generate_voronoi((0, 0, 2, 1), 40, 10, seed=5)
    np.testing.assert_array_equal(a.vertices, b.vertices)
    assert all(np.array_equal(x, y) for x, y in zip(a.cells, b.cells))


def test_facet_consistency(vmesh12):
    m = vmesh12
    for f in m.interior_facets:
        k1, k2 = m.facet_cells[f]
        assert k1 < k2
        assert list(m.cell_facets(k1)).count(f) == 1
        assert list(m.cell_facets(k2)).count(f) == 1
    assert np.all(m.facet_cells[m.boundary_facets, 1] == BOUNDARY)
    np.testing.assert_allclose(np.linalg.norm(m.facet_normals, axis=1), 1.0, atol=1e-14)
    # normals point from K1 towards K2
    for f in m.interior_facets:
        k1, k2 = m.facet_cells[f]
        d = m.cell_centroids[k2] - m.cell_centroids[k1]
        assert d @ m.facet_normals[f] > 0


def test_boundary_normals_point_outward(vmesh12):
    m = vmesh12
    for f in m.boundary_facets:
        mid = m.vertices[m.facet_vertices[f]].mean(axis=0)
        assert (mid - m.cell_centroids[m.facet_cells[f, 0]]) @ m.facet_normals[f] > 0


def test_lloyd_sweep_does_not_increase_energy():
    rng = np.random.default_rng(2)
    dom = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    seeds = rng.uniform(0, 1, size=(60, 2))
    e = [centroidal_energy(seeds, dom)]
    for _ in range(5):
        seeds = lloyd_sweep(seeds, dom)
        e.append(centroidal_energy(seeds, dom))
    assert all(b <= a * (1 + 1e-12) for a, b in zip(e, e[1:]))


def test_voronoi_cells_partition_convex_polygon():
    rng = np.random.default_rng(0)
    dom = np.array([[0, 0], [2, 0], [2.5, 1], [1, 2], [-0.5, 1]], dtype=float)
    seeds = np.array([[1, 1]]) + 0.4 * rng.normal(size=(25, 2))
    seeds = seeds[[np.all([(b - a)[0] * (p - a)[1] - (b - a)[1] * (p - a)[0] > 0 for a, b in zip(dom, np.roll(dom, -1, 0))]) for p in seeds]]
    cells = voronoi_cells(seeds, dom)
    area = sum(0.5 * abs(np.dot(c[:, 0], np.roll(c[:, 1], -1)) - np.dot(c[:, 1], np.roll(c[:, 0], -1))) for c in cells)
    dom_area = 0.5 * abs(np.dot(dom[:, 0], np.roll(dom[:, 1], -1)) - np.dot(dom[:, 1], np.roll(dom[:, 0], -1)))
    assert area == pytest.approx(dom_area, rel=1e-10)


@pytest.mark.parametrize(
    "r1, r2, theta, expected",
    [(1.0, 3.0, -1.0, 1.5), (1.0, 4.0, 0.5, 2.25), (2.0, 2.0, 0.5, 2.0), (2.0, 2.0, -1.0, 2.0)],
)
def test_power_mean(r1, r2, theta, expected):
    assert power_mean(r1, r2, theta) == pytest.approx(expected, rel=1e-14)


@settings(max_examples=50, deadline=None)
@given(a=st.floats(0.01, 100), theta=st.sampled_from([-2.0, -1.0, 0.5, 1.0, 3.0]), eta=st.floats(0.1, 10))
def test_mesh_size_equal_neighbors(a, theta, eta):
    assert power_mean(a, a, theta) / eta == pytest.approx(a / eta, rel=1e-12)


def test_mesh_size_on_facet_matches_definition():
    m = square_mesh(2, 1)
    f = int(m.interior_facets[0])
    # both cells: |K| = 1, |F| = 1, m_K = 4
    assert mesh_size_on_facet(m, f, -1.0, 2.0, use_facet_count=True) == pytest.approx(0.25 / 2.0)
    assert mesh_size_on_facet(m, f, -1.0, 2.0, use_facet_count=False) == pytest.approx(1.0 / 2.0)
    with pytest.raises(ValueError):
        mesh_size_on_facet(m, int(m.boundary_facets[0]), -1.0, 1.0)


def test_power_mean_rejects_zero_exponent():
    with pytest.raises(ValueError):
        power_mean(1.0, 2.0, 0.0)
