import numpy as np
import pytest
import scipy.sparse.linalg as spla

from dpgamg.fem import (
    LAGRANGE,
    RT,
    TRACE,
    AssemblyError,
    SpaceError,
    assemble_curl,
    assemble_dpg,
    assemble_h1_gram,
    assemble_hdiv_gram,
    assemble_pi,
    build_space,
    h1_error,
    rt_divergence_l2,
)
from dpgamg.fem.reference import lagrange_element
from dpgamg.fem.spaces import geometry
from dpgamg.linalg import dense_generalized_eig
from dpgamg.mesh import QUAD, TRI, Mesh, build_cartesian_mesh


def one_triangle():
    return Mesh(np.array([[0.0, 0], [1, 0], [0, 1]]), np.array([[0, 1, 2]]), TRI, np.zeros(1, dtype=int))


def lagrange_coords(space):
    """Physical coordinates of every Lagrange node."""
    ref = lagrange_element(space.mesh.kind, space.degree)
    geo = geometry(space.mesh, np.arange(space.mesh.nelems), ref.nodes)
    xy = np.empty((space.ndofs, 2))
    xy[space.elem_dofs.ravel()] = geo.x.reshape(-1, 2)
    return xy


def _legendre(j, s):
    return np.polynomial.legendre.legval(2 * s - 1, [0] * j + [1])


def facet_moments_oracle(mesh, field, k, npts=8):
    s, w = np.polynomial.legendre.leggauss(npts)
    s, w = 0.5 * (s + 1), 0.5 * w
    a = mesh.vertices[mesh.facets[:, 0]]
    b = mesh.vertices[mesh.facets[:, 1]]
    n = mesh.facet_normals()
    length = np.linalg.norm(b - a, axis=1)
    out = np.empty((mesh.nfacets, k + 1))
    for e in range(mesh.nfacets):
        x = a[e] + s[:, None] * (b[e] - a[e])
        fn = field(x[:, 0], x[:, 1]) @ n[e]
        for j in range(k + 1):
            out[e, j] = length[e] * np.sum(w * fn * _legendre(j, s))
    return out


# ---------------------------------------------------------------------------
# spaces


def test_rt0_single_triangle():
    V = build_space(one_triangle(), RT, 0)
    assert V.ndofs == 3 and V.interface.all()


def test_rt1_single_triangle():
    V = build_space(one_triangle(), RT, 1)
    assert V.ndofs == 8
    assert V.interface.sum() == 6
    assert list(V.partition).count("i") == 2


def test_lagrange_count_and_boundary():
    V = build_space(build_cartesian_mesh(2, 2, QUAD), LAGRANGE, 1)
    assert V.ndofs == 9
    assert V.free_dofs.tolist() == [4]


@pytest.mark.parametrize("kind", [TRI, QUAD])
@pytest.mark.parametrize("k", [0, 1, 2])
def test_trace_matches_rt_facets(kind, k):
    m = build_cartesian_mesh(3, 2, kind)
    rt, q = build_space(m, RT, k), build_space(m, TRACE, k)
    assert q.ndofs == (k + 1) * m.nfacets == rt.interface.sum()
    nv = m.verts_per_elem
    np.testing.assert_array_equal(rt.elem_dofs[:, : nv * (k + 1)], q.elem_dofs)
    np.testing.assert_array_equal(rt.elem_signs[:, : nv * (k + 1)], q.elem_signs)


@pytest.mark.parametrize("kind", [TRI, QUAD])
def test_rt_interior_dofs_owned_by_one_element(kind):
    rt = build_space(build_cartesian_mesh(2, 3, kind), RT, 2)
    counts = np.bincount(rt.elem_dofs.ravel(), minlength=rt.ndofs)
    assert np.all(counts[rt.interior_dofs] == 1)
    assert np.all(counts[rt.interface_dofs] <= 2)


def test_unsupported_degree():
    with pytest.raises(SpaceError):
        build_space(one_triangle(), LAGRANGE, 0)
    with pytest.raises(SpaceError):
        build_space(one_triangle(), "nedelec", 1)


# ---------------------------------------------------------------------------
# Gram matrices


def test_hdiv_gram_unit_square_rt0():
    """Entrywise comparison with the explicit RT0 basis on the unit square."""
    m = build_cartesian_mesh(1, 1, QUAD)
    D = assemble_hdiv_gram(build_space(m, RT, 0)).toarray()
    g, w = np.polynomial.legendre.leggauss(10)
    g, w = 0.5 * (g + 1), 0.5 * w
    X, Y = np.meshgrid(g, g, indexing="ij")
    W = np.outer(w, w)
    # outward unit-flux basis, keyed by edge midpoint, with its divergence
    basis = {
        (0.5, 0.0): ((0 * X, Y - 1), 1.0),
        (1.0, 0.5): ((X, 0 * Y), 1.0),
        (0.5, 1.0): ((0 * X, Y), 1.0),
        (0.0, 0.5): ((X - 1, 0 * Y), 1.0),
    }
    mids = m.vertices[m.facets].mean(axis=1)
    n = m.facet_normals()
    fields = []
    for e in range(4):
        vec, div = basis[tuple(mids[e])]
        outward = np.sign(n[e] @ (mids[e] - 0.5))
        fields.append((outward * vec[0], outward * vec[1], outward * div))
    ref = np.array(
        [[np.sum(W * (a[0] * b[0] + a[1] * b[1] + a[2] * b[2])) for b in fields] for a in fields]
    )
    np.testing.assert_allclose(D, ref, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("kind", [TRI, QUAD])
@pytest.mark.parametrize("k", [0, 1, 2])
def test_hdiv_gram_symmetric(kind, k):
    D = assemble_hdiv_gram(build_space(build_cartesian_mesh(3, 3, kind), RT, k))
    assert (D != D.T).nnz == 0
    assert np.all(D.diagonal() > 0)
    assert D @ np.zeros(D.shape[0]) @ np.zeros(D.shape[0]) == 0.0


@pytest.mark.parametrize("kind", [TRI, QUAD])
def test_h1_gram_quadratic_form(kind, rng):
    U = build_space(build_cartesian_mesh(4, 4, kind), LAGRANGE, 2)
    G = assemble_h1_gram(U)
    assert (G != G.T).nnz == 0
    u = np.zeros(U.ndofs)
    free = U.free_dofs
    u[free] = rng.standard_normal(len(free))
    zero = lambda x, y: 0 * x  # noqa: E731
    ref = h1_error(U, u, zero, lambda x, y: (0 * x, 0 * y)) ** 2
    assert abs(u[free] @ G @ u[free] - ref) <= 1e-12 * ref
    u[free] = 1.0
    ref = h1_error(U, u, zero, lambda x, y: (0 * x, 0 * y)) ** 2
    assert abs(u[free] @ G @ u[free] - ref) <= 1e-12 * ref


def test_h1_gram_kappa_is_stiffness_only():
    m = build_cartesian_mesh(3, 3, QUAD)
    U = build_space(m, LAGRANGE, 2)
    ones = np.ones(U.ndofs)
    K1 = assemble_h1_gram(U, kappa=1.0, eliminate=False)
    K2 = assemble_h1_gram(U, kappa=np.full(m.nelems, 2.0), eliminate=False)
    G = assemble_h1_gram(U, eliminate=False)
    assert np.abs(K1 @ ones).max() < 1e-12  # constants lie in the stiffness kernel
    assert np.isclose(ones @ G @ ones, 1.0, rtol=1e-12)  # ... but have unit mass
    np.testing.assert_allclose(K2.toarray(), 2 * K1.toarray(), rtol=1e-14, atol=1e-14)
    assert (K1 != K1.T).nnz == 0


def test_h1_gram_positive_definite():
    G = assemble_h1_gram(build_space(build_cartesian_mesh(4, 4, QUAD), LAGRANGE, 1)).toarray()
    assert np.linalg.eigvalsh(G)[0] > 0


# ---------------------------------------------------------------------------
# Pi and C


@pytest.mark.parametrize("kind", [TRI, QUAD])
@pytest.mark.parametrize("k", [0, 1])
def test_pi_reproduces_polynomial_fields(kind, k):
    m = build_cartesian_mesh(3, 3, kind)
    lag, rt = build_space(m, LAGRANGE, k + 1), build_space(m, RT, k)
    Pi = assemble_pi(lag, rt)
    assert Pi.shape == (rt.ndofs, 2 * lag.ndofs)
    xy = lagrange_coords(lag)
    fields = [
        lambda x, y: np.stack([1 + 0 * x, 0 * y], -1),
        lambda x, y: np.stack([x + 2 * y, 3 - y], -1),
    ]
    if k == 1:
        fields.append(lambda x, y: np.stack([x * x - y, x * y + y * y], -1))
    for fld in fields:
        z = fld(xy[:, 0], xy[:, 1])
        coeffs = Pi @ np.concatenate([z[:, 0], z[:, 1]])
        got = coeffs[: rt.interface.sum()].reshape(-1, k + 1)
        np.testing.assert_allclose(got, facet_moments_oracle(m, fld, k), atol=1e-12)
    # the constant field has zero divergence
    z0 = np.concatenate([np.ones(lag.ndofs), np.zeros(lag.ndofs)])
    assert rt_divergence_l2(rt, Pi @ z0).max() < 1e-12


@pytest.mark.parametrize("kind", [TRI, QUAD])
@pytest.mark.parametrize("k", [0, 1, 2])
def test_curl_matrix(kind, k, rng):
    m = build_cartesian_mesh(3, 2, kind)
    lag, rt = build_space(m, LAGRANGE, k + 1), build_space(m, RT, k)
    C = assemble_curl(lag, rt)
    assert np.abs(C @ np.ones(lag.ndofs)).max() < 1e-12
    for _ in range(100):
        assert rt_divergence_l2(rt, C @ rng.standard_normal(lag.ndofs)).max() < 1e-12
    xy = lagrange_coords(lag)
    phi = lambda x, y: x * x * y + 0.5 * x - y * y  # noqa: E731
    rot = lambda x, y: np.stack([x * x - 2 * y, -(2 * x * y + 0.5)], -1)  # noqa: E731
    if k >= 1:
        got = (C @ phi(xy[:, 0], xy[:, 1]))[: rt.interface.sum()].reshape(-1, k + 1)
        np.testing.assert_allclose(got, facet_moments_oracle(m, rot, k), atol=1e-12)


@pytest.mark.parametrize("kind", [TRI, QUAD])
@pytest.mark.parametrize("k", [1, 2])
def test_structural_zero_blocks(kind, k):
    m = build_cartesian_mesh(3, 3, kind)
    lag, rt = build_space(m, LAGRANGE, k + 1), build_space(m, RT, k)
    f = rt.interface_dofs
    Pi = assemble_pi(lag, rt).tocsr()[f]
    C = assemble_curl(lag, rt).tocsr()[f]
    interior_vec = np.flatnonzero(~np.tile(lag.interface, 2))
    assert len(lag.interior_dofs) > 0 or kind == TRI
    assert abs(Pi[:, interior_vec]).sum() == 0.0
    assert abs(C[:, lag.interior_dofs]).sum() == 0.0


def test_degree_mismatch_rejected():
    m = build_cartesian_mesh(2, 2, QUAD)
    with pytest.raises(AssemblyError):
        assemble_curl(build_space(m, LAGRANGE, 1), build_space(m, RT, 1))


# ---------------------------------------------------------------------------
# DPG system


@pytest.mark.parametrize("kind", [TRI, QUAD])
@pytest.mark.parametrize("p", [1, 2])
def test_dpg_structure(kind, p):
    m = build_cartesian_mesh(3, 3, kind)
    s = assemble_dpg(m, p)
    assert s.nq == p * m.nfacets  # fluxes live on every facet, boundary included
    assert (s.A != s.A.T).nnz == 0
    assert s.B0.shape == (s.Y.ndofs, s.nu) and s.B1.shape == (s.Y.ndofs, s.nq)
    for blk in s.M_blocks[:5]:
        assert np.linalg.eigvalsh(blk)[0] > 0
    x = np.random.default_rng(1).standard_normal(s.n)
    np.testing.assert_allclose(s.A @ x, s.apply_A(x), rtol=1e-10, atol=1e-12)


def test_energy_identity(rng):
    s = assemble_dpg(build_cartesian_mesh(4, 4, QUAD), 1, 2)
    for _ in range(100):
        x = rng.standard_normal(s.n)
        v = s.M_solve(s.B(x))
        a = x @ (s.A @ x)
        assert abs(a - v @ s.M_apply(v)) <= 1e-12 * a


def test_zero_source_gives_zero_solution():
    s = assemble_dpg(build_cartesian_mesh(3, 3, TRI), 1, f=0.0)
    assert not np.any(s.g)
    assert not np.any(spla.spsolve(s.A.tocsc(), s.g))


def test_invalid_arguments():
    m = build_cartesian_mesh(2, 2, QUAD)
    with pytest.raises(AssemblyError):
        assemble_dpg(m, 2, 1)
    with pytest.raises(AssemblyError):
        assemble_dpg(m, 1, kappa=np.r_[1.0, 1.0, 0.0, 1.0])


def test_manufactured_solution_rate():
    u = lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)  # noqa: E731
    du = lambda x, y: (  # noqa: E731
        np.pi * np.cos(np.pi * x) * np.sin(np.pi * y),
        np.pi * np.sin(np.pi * x) * np.cos(np.pi * y),
    )
    f = lambda x, y: 2 * np.pi**2 * u(x, y)  # noqa: E731
    errs, hs = [], []
    for n in (4, 8, 16, 32):
        m = build_cartesian_mesh(n, n, QUAD)
        s = assemble_dpg(m, 1, 2, f=f)
        x = spla.spsolve(s.A.tocsc(), s.g)
        errs.append(h1_error(s.U, s.full_u(x), u, du))
        hs.append(m.h())
    rates = np.log(np.array(errs[:-1]) / errs[1:]) / np.log(np.array(hs[:-1]) / hs[1:])
    assert np.all(0.85 <= rates[-2:]) and np.all(rates[-2:] <= 1.15), rates


def test_a0_equivalent_to_h1_gram():
    from dpgamg.precond import primal_gram

    ends = []
    for n in (2, 4, 8):
        s = assemble_dpg(build_cartesian_mesh(n, n, QUAD), 1)
        lam = dense_generalized_eig(s.A0, primal_gram(s))
        ends.append((lam[0], lam[-1]))
    lo, hi = np.array(ends).T
    assert lo.max() / lo.min() - 1 <= 0.25
    assert hi.max() / hi.min() - 1 <= 0.25
