import logging
from collections import Counter

import numpy as np
import pytest

from dpgamg.mesh import (
    QUAD,
    TRI,
    Mesh,
    MeshError,
    build_cartesian_mesh,
    load_mesh,
    refine,
    refine_uniform,
    sample_mesh,
    write_mesh,
)


def facet_multiset(m):
    pts = m.vertices[m.facets]
    return Counter(tuple(np.round(np.sort(p.ravel()), 12)) for p in pts)


@pytest.mark.parametrize(
    "nx,ny,kind,V,F,E,nb",
    [(1, 1, QUAD, 4, 1, 4, 4), (2, 2, TRI, 9, 8, 16, 8), (2, 1, QUAD, 6, 2, 7, 6)],
)
def test_cartesian_counts(nx, ny, kind, V, F, E, nb):
    m = build_cartesian_mesh(nx, ny, kind)
    assert (m.nverts, m.nelems, m.nfacets) == (V, F, E)
    assert len(m.boundary_facets) == nb
    assert m.euler_characteristic() == 1


def test_two_quads_have_one_interior_facet():
    assert len(build_cartesian_mesh(2, 1, QUAD).interior_facets) == 1


def test_zero_counts_rejected():
    with pytest.raises(MeshError):
        build_cartesian_mesh(0, 3)


@pytest.mark.parametrize("kind", [TRI, QUAD])
def test_incidence_and_normals(kind):
    m = build_cartesian_mesh(3, 2, kind)
    f2e = m.facet_to_elems
    interior = f2e[:, 1] >= 0
    assert np.all(f2e[:, 0] >= 0)
    assert np.all(f2e[interior, 0] < f2e[interior, 1])
    assert np.all(m.facets[:, 0] < m.facets[:, 1])
    centroids = m.vertices[m.elements].mean(axis=1)
    mids = m.vertices[m.facets].mean(axis=1)
    n = m.facet_normals()
    # normal points away from the lower-indexed element
    assert np.all(np.einsum("ij,ij->i", n, mids - centroids[f2e[:, 0]]) > 0)
    # on the boundary that is the outward normal of the unit square
    b = m.boundary_facets
    assert np.all(np.einsum("ij,ij->i", n[b], mids[b] - 0.5) > 0)
    np.testing.assert_allclose(np.linalg.norm(n, axis=1), 1.0)


def test_refine_single_quad():
    m = refine_uniform(build_cartesian_mesh(1, 1, QUAD))
    assert (m.nelems, m.nverts, m.nfacets) == (4, 9, 12)


@pytest.mark.parametrize("kind", [TRI, QUAD])
def test_refine_matches_structured(kind):
    for n in (1, 2, 3):
        fine = refine_uniform(build_cartesian_mesh(n, n, kind))
        ref = build_cartesian_mesh(2 * n, 2 * n, kind)
        assert (fine.nverts, fine.nfacets, fine.nelems) == (ref.nverts, ref.nfacets, ref.nelems)
        assert facet_multiset(fine) == facet_multiset(ref)


def test_refine_inherits_attributes_and_boundary():
    m = build_cartesian_mesh(2, 2, TRI)
    m = Mesh(m.vertices, m.elements, m.kind, np.arange(m.nelems))
    fine = refine(m, 2)
    assert fine.nelems == 16 * m.nelems
    assert fine.euler_characteristic() == 1
    np.testing.assert_array_equal(np.bincount(fine.attribute), np.full(m.nelems, 16))
    mids = fine.vertices[fine.facets[fine.boundary_facets]].mean(axis=1)
    on_edge = np.isclose(mids, 0).any(1) | np.isclose(mids, 1).any(1)
    assert on_edge.all()
    assert len(fine.boundary_facets) == 4 * len(m.boundary_facets)


def test_load_single_triangle(tmp_path):
    p = tmp_path / "t.mesh2d"
    p.write_text("mesh2d tri\nvertices 3\n0 0\n1 0\n0 1\nelements 1\n0 1 2 7\n")
    m = load_mesh(p)
    assert (m.nverts, m.nelems, m.nfacets) == (3, 1, 3)
    assert m.attribute.tolist() == [7]


def test_load_dangling_vertex_warns(tmp_path, caplog):
    p = tmp_path / "t.mesh2d"
    p.write_text("mesh2d tri\nvertices 4\n0 0\n1 0\n0 1\n5 5\nelements 1\n0 1 2 0\n")
    with caplog.at_level(logging.WARNING):
        m = load_mesh(p)
    assert m.unused_vertices.tolist() == [3]
    assert "unused" in caplog.text


def test_load_repeated_vertex_is_inverted(tmp_path):
    p = tmp_path / "t.mesh2d"
    p.write_text("mesh2d tri\nvertices 3\n0 0\n1 0\n0 1\nelements 1\n0 1 1 0\n")
    with pytest.raises(MeshError, match="inverted element"):
        load_mesh(p)


@pytest.mark.parametrize(
    "text",
    [
        "mesh2d hex\nvertices 0\nelements 0\n",
        "mesh2d tri\nvertices 3\n0 0\n1 0\nelements 1\n0 1 2 0\n",
        "mesh2d tri\nvertices 3\n0 0\n1 0\n0 1\nelements 1\n0 1 2\n",
        "mesh2d tri\nvertices 3\n0 0\n1 0\n0 1\nelements 1\n0 2 1 0\n",
    ],
)
def test_load_rejects_malformed(tmp_path, text):
    p = tmp_path / "bad.mesh2d"
    p.write_text(text)
    with pytest.raises(MeshError):
        load_mesh(p)


def test_nonconforming_edge_rejected():
    verts = np.array([[0, 0], [1, 0], [0, 1], [1, 1], [0.5, -1.0]], dtype=float)
    # three triangles on the edge (0, 1)
    elems = np.array([[0, 1, 2], [0, 1, 3], [1, 0, 4]])
    with pytest.raises(MeshError):
        Mesh(verts, elems, TRI, np.zeros(3, dtype=int))


@pytest.mark.parametrize("kind", [TRI, QUAD])
def test_roundtrip_and_samples(tmp_path, kind):
    m = sample_mesh(kind)
    assert m.euler_characteristic() == 1
    write_mesh(m, tmp_path / "m.mesh2d")
    m2 = load_mesh(tmp_path / "m.mesh2d")
    np.testing.assert_array_equal(m.vertices, m2.vertices)
    np.testing.assert_array_equal(m.elements, m2.elements)
