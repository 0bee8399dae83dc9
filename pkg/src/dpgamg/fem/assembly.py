"""Element loops for every matrix of the DPG system and its auxiliary spaces.

All loops are vectorized over element chunks.  Symmetric matrices are made
exactly symmetric by mirroring their upper triangle after summation.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .quadrature import element_rule, line_rule, shifted_legendre
from .reference import lagrange_element, ref_edges, rt_element
from .spaces import BROKEN, LAGRANGE, RT, FeSpace, geometry

CHUNK = 4096


class AssemblyError(ValueError):
    pass


def chunks(n, size=CHUNK):
    for start in range(0, n, size):
        yield np.arange(start, min(start + size, n))


def exact_symmetric(A) -> sp.csr_matrix:
    """Mirror the upper triangle so that ``A == A.T`` holds bitwise."""
    A = sp.csr_matrix(A)
    upper = sp.triu(A, k=1)
    out = (upper + upper.T + sp.diags(A.diagonal())).tocsr()
    out.sort_indices()
    return out


def weighted_products(w, X, Y):
    """sum_q w[e,q] X[e,q,a,...] Y[e,q,b,...] -> (nE, na, nb) via batched matmul."""
    nE, nq, na = X.shape[:3]
    nb = Y.shape[2]
    Xw = (X * w.reshape(w.shape + (1,) * (X.ndim - 2))).reshape(nE, nq, na, -1)
    Xw = Xw.transpose(0, 2, 1, 3).reshape(nE, na, -1)
    Yr = Y.reshape(nE, nq, nb, -1).transpose(0, 2, 1, 3).reshape(nE, nb, -1)
    return Xw @ Yr.transpose(0, 2, 1)


def _scatter(rows, cols, vals, shape):
    A = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape).tocsr()
    A.sum_duplicates()
    return A


def _local_to_global(space: FeSpace, elems, local):
    """Scatter (nE, na, nb) element matrices of ``space`` x ``space``."""
    d = space.elem_dofs[elems]
    s = space.elem_signs[elems]
    vals = local * s[:, :, None] * s[:, None, :]
    rows = np.broadcast_to(d[:, :, None], vals.shape)
    cols = np.broadcast_to(d[:, None, :], vals.shape)
    return rows, cols, vals


def physical_grads(geo, ref_grads):
    """Map reference gradients (nq, na, 2) to physical ones (nE, nq, na, 2)."""
    it = geo.inv_t
    g = ref_grads[None]
    return np.stack(
        [
            it[..., 0, 0, None] * g[..., 0] + it[..., 0, 1, None] * g[..., 1],
            it[..., 1, 0, None] * g[..., 0] + it[..., 1, 1, None] * g[..., 1],
        ],
        axis=-1,
    )


def _kappa_array(mesh, kappa):
    if kappa is None:
        return None
    k = np.broadcast_to(np.asarray(kappa, dtype=float), (mesh.nelems,)).copy()
    if np.any(~(k > 0)):
        raise AssemblyError("coefficient must be positive on every element")
    return k


def h1_element_matrices(space: FeSpace, elems, kappa=None, mass=True, qdeg=None):
    """Local (kappa) stiffness plus optional mass for Lagrange-type spaces."""
    ref = lagrange_element(space.mesh.kind, space.degree)
    pts, w = element_rule(space.mesh.kind, qdeg or 2 * space.degree + 2)
    geo = geometry(space.mesh, elems, pts)
    phi = ref.values(pts)
    grad = physical_grads(geo, ref.grads(pts))
    wdet = geo.det * w
    K = weighted_products(wdet, grad, grad)
    if kappa is not None:
        K *= kappa[elems][:, None, None]
    if mass:
        K += np.einsum("eq,qa,qb->eab", wdet, phi, phi, optimize=True)
    return 0.5 * (K + K.transpose(0, 2, 1))


def assemble_h1_gram(space: FeSpace, kappa=None, eliminate=True) -> sp.csr_matrix:
    """H^1 Gram matrix, or the kappa-weighted stiffness when ``kappa`` is given.

    With ``eliminate`` the rows/columns of Dirichlet boundary DOFs are removed.
    """
    if space.family not in (LAGRANGE, BROKEN):
        raise AssemblyError("H1 Gram needs a Lagrange space")
    mesh = space.mesh
    kap = _kappa_array(mesh, kappa)
    parts = []
    for el in chunks(mesh.nelems):
        loc = h1_element_matrices(space, el, kap, mass=kap is None)
        parts.append(_scatter(*_local_to_global(space, el, loc), (space.ndofs, space.ndofs)))
    A = exact_symmetric(sum(parts))
    if eliminate and space.family == LAGRANGE:
        free = space.free_dofs
        A = exact_symmetric(A[free][:, free])
    return A


def hdiv_element_matrices(space: FeSpace, elems):
    ref = rt_element(space.mesh.kind, space.degree)
    pts, w = element_rule(space.mesh.kind, 2 * space.degree + 4)
    geo = geometry(space.mesh, elems, pts)
    phi = np.einsum("eqij,qaj->eqai", geo.jac, ref.values(pts), optimize=True)
    div = ref.divergence(pts)
    wj = w / geo.det
    D = weighted_products(wj, phi, phi) + np.einsum("eq,qa,qb->eab", wj, div, div, optimize=True)
    return 0.5 * (D + D.transpose(0, 2, 1))


def assemble_hdiv_gram(space: FeSpace) -> sp.csr_matrix:
    """Gram matrix of the H(div) inner product in the Piola-mapped RT basis."""
    if space.family != RT:
        raise AssemblyError("H(div) Gram needs a Raviart-Thomas space")
    parts = []
    for el in chunks(space.mesh.nelems):
        loc = hdiv_element_matrices(space, el)
        parts.append(_scatter(*_local_to_global(space, el, loc), (space.ndofs, space.ndofs)))
    return exact_symmetric(sum(parts))


def _rt_local_dofs(rt, piola_fields):
    """Apply reference RT DOFs to pulled-back fields.

    ``piola_fields(pts) -> (nE, nq, nf, 2)`` returns the contravariant pullback
    at reference points.  Result has shape (nE, ndofs_rt, nf).
    """
    rows = []
    for pts, n, lw in rt.edge_dof_weights():
        rows.append(np.einsum("qj,eqf->ejf", lw, piola_fields(pts) @ n))
    if rt.n_interior:
        pts, psi = rt.interior_dof_weights()
        rows.append(np.einsum("qtc,eqfc->etf", psi, piola_fields(pts)))
    return np.concatenate(rows, axis=1)


def _owned_rows(rt_space: FeSpace, elems):
    """Mask of local RT rows this element writes: interior rows, and facet rows it owns."""
    mesh = rt_space.mesh
    ref = rt_element(mesh.kind, rt_space.degree)
    k1 = rt_space.degree + 1
    owner = mesh.facet_to_elems[mesh.elem_facets[elems], 0] == elems[:, None]
    mask = np.ones((len(elems), ref.ndofs), dtype=bool)
    mask[:, : ref.n_edge_dofs] = np.repeat(owner, k1, axis=1)
    return mask


def _edge_support(rt_ref, lag_ref):
    """Structural pattern: edge row (l, j) only sees Lagrange nodes on closed edge l."""
    pat = np.ones((rt_ref.ndofs, lag_ref.ndofs), dtype=bool)
    k1 = rt_ref.k + 1
    for l, nodes in enumerate(lag_ref.closed_edge_nodes):
        row = np.zeros(lag_ref.ndofs, dtype=bool)
        row[nodes] = True
        pat[l * k1 : (l + 1) * k1] = row
    return pat


def _interp_global(rt_space, lag_space, elems, local, ncomp):
    """Scatter local interpolation blocks (nE, nrt, ncomp*nl) without summing shared rows."""
    lag_ref = lagrange_element(lag_space.mesh.kind, lag_space.degree)
    rt_ref = rt_element(rt_space.mesh.kind, rt_space.degree)
    pat = np.tile(_edge_support(rt_ref, lag_ref), (1, ncomp))
    keep = _owned_rows(rt_space, elems)[:, :, None] & pat[None]
    vals = local * rt_space.elem_signs[elems][:, :, None]
    rows = np.broadcast_to(rt_space.elem_dofs[elems][:, :, None], vals.shape)
    cols = np.concatenate(
        [lag_space.elem_dofs[elems] + c * lag_space.ndofs for c in range(ncomp)], axis=1
    )
    cols = np.broadcast_to(cols[:, None, :], vals.shape)
    return rows[keep], cols[keep], vals[keep]


def _check_pair(lag_space, rt_space):
    if lag_space.mesh is not rt_space.mesh:
        raise AssemblyError("spaces live on different meshes")
    if lag_space.family != LAGRANGE or rt_space.family != RT:
        raise AssemblyError("expected a Lagrange space and a Raviart-Thomas space")
    if lag_space.degree != rt_space.degree + 1:
        raise AssemblyError("Lagrange degree must be the RT index plus one")


def assemble_pi(vec_h1: FeSpace, rt: FeSpace) -> sp.csr_matrix:
    """RT interpolation of the vector Lagrange space.

    ``vec_h1`` is the scalar Lagrange space; vector DOFs are ordered
    component-blocked: all x-components, then all y-components.
    """
    _check_pair(vec_h1, rt)
    mesh = rt.mesh
    lag_ref = lagrange_element(mesh.kind, vec_h1.degree)
    rt_ref = rt_element(mesh.kind, rt.degree)
    rows, cols, vals = [], [], []
    for el in chunks(mesh.nelems):

        def pulled(pts, el=el):
            geo = geometry(mesh, el, pts)
            J = geo.jac
            adj = np.empty_like(J)
            adj[..., 0, 0], adj[..., 1, 1] = J[..., 1, 1], J[..., 0, 0]
            adj[..., 0, 1], adj[..., 1, 0] = -J[..., 0, 1], -J[..., 1, 0]
            phi = lag_ref.values(pts)  # (nq, nl)
            # field e_c * phi_l pulled back: adj(J) e_c phi_l
            fx = adj[:, :, None, :, 0] * phi[None, :, :, None]
            fy = adj[:, :, None, :, 1] * phi[None, :, :, None]
            return np.concatenate([fx, fy], axis=2)

        local = _rt_local_dofs(rt_ref, pulled)
        r, c, v = _interp_global(rt, vec_h1, el, local, 2)
        rows.append(r), cols.append(c), vals.append(v)
    shape = (rt.ndofs, 2 * vec_h1.ndofs)
    return _scatter(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), shape)


def assemble_curl(scalar_h1: FeSpace, rt: FeSpace) -> sp.csr_matrix:
    """RT coefficients of the rotated gradient (d_y phi, -d_x phi) of Lagrange functions."""
    _check_pair(scalar_h1, rt)
    mesh = rt.mesh
    lag_ref = lagrange_element(mesh.kind, scalar_h1.degree)
    rt_ref = rt_element(mesh.kind, rt.degree)

    def pulled(pts):
        g = lag_ref.grads(pts)  # the rotated gradient pulls back to the reference one
        return np.stack([g[..., 1], -g[..., 0]], axis=-1)[None]

    local_ref = _rt_local_dofs(rt_ref, pulled)[0]
    rows, cols, vals = [], [], []
    for el in chunks(mesh.nelems):
        local = np.broadcast_to(local_ref, (len(el),) + local_ref.shape)
        r, c, v = _interp_global(rt, scalar_h1, el, local, 1)
        rows.append(r), cols.append(c), vals.append(v)
    shape = (rt.ndofs, scalar_h1.ndofs)
    return _scatter(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), shape)


def rt_divergence_l2(rt: FeSpace, coeffs) -> np.ndarray:
    """Element-wise L2 norm of div of the RT function with global ``coeffs``."""
    mesh = rt.mesh
    ref = rt_element(mesh.kind, rt.degree)
    pts, w = element_rule(mesh.kind, 2 * rt.degree + 2)
    div = ref.divergence(pts)
    out = np.empty(mesh.nelems)
    for el in chunks(mesh.nelems):
        geo = geometry(mesh, el, pts)
        c = coeffs[rt.elem_dofs[el]] * rt.elem_signs[el]
        d = np.einsum("qa,ea->eq", div, c) / geo.det
        out[el] = np.sqrt(np.einsum("eq,eq,q->e", d * d, geo.det, w))
    return out


def trace_pairing_reference(kind: str, k: int, test_ref):
    """(2j+1) int_0^1 L_j(s) v(xhat_l(s)) ds for every local edge l, j and test function v.

    Shape (n_test, nedges*(k+1)), independent of element geometry because the
    trace basis is dual to the facet moments.
    """
    s, w = line_rule(2 * max(k, test_ref.degree) + 2)
    L = shifted_legendre(k, s) * (2 * np.arange(k + 1) + 1)
    blocks = []
    for a, b, _, _ in ref_edges(kind):
        pts = a + s[:, None] * (b - a)
        blocks.append(np.einsum("q,qa,qj->aj", w, test_ref.values(pts), L))
    return np.concatenate(blocks, axis=1)
