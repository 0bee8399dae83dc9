"""Primal DPG discretization of  -div(kappa grad u) = f,  u = 0 on the boundary."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..mesh import Mesh
from .assembly import (
    AssemblyError,
    _kappa_array,
    _scatter,
    chunks,
    exact_symmetric,
    h1_element_matrices,
    physical_grads,
    weighted_products,
    trace_pairing_reference,
)
from .quadrature import element_rule
from .reference import lagrange_element
from .spaces import BROKEN, LAGRANGE, TRACE, FeSpace, build_space, geometry


@dataclass(eq=False)
class DpgSystem:
    """Assembled DPG matrices.

    ``B0`` maps free trial DOFs of U_h to test DOFs, ``B1`` maps flux DOFs.
    The test Gram matrix is block diagonal and kept as per-element Cholesky
    factors ``M_chol``.  Unknown vector layout is ``[u_free, q]``.
    """

    mesh: Mesh
    U: FeSpace
    Q: FeSpace
    Y: FeSpace
    B0: sp.csr_matrix
    B1: sp.csr_matrix
    M_blocks: np.ndarray
    M_chol: np.ndarray
    F: np.ndarray
    bc: np.ndarray
    kappa: np.ndarray
    A: sp.csr_matrix
    g: np.ndarray
    free: np.ndarray = field(repr=False)

    @property
    def nu(self) -> int:
        return len(self.free)

    @property
    def nq(self) -> int:
        return self.Q.ndofs

    @property
    def n(self) -> int:
        return self.nu + self.nq

    @property
    def A0(self) -> sp.csr_matrix:
        return exact_symmetric(self.A[: self.nu, : self.nu])

    @property
    def A1(self) -> sp.csr_matrix:
        return exact_symmetric(self.A[self.nu :, self.nu :])

    def B(self, x):
        return self.B0 @ x[: self.nu] + self.B1 @ x[self.nu :]

    def BT(self, y):
        return np.concatenate([self.B0.T @ y, self.B1.T @ y])

    def M_apply(self, v):
        nE, nloc = self.M_blocks.shape[:2]
        return np.einsum("eab,eb->ea", self.M_blocks, v.reshape(nE, nloc)).ravel()

    def M_solve(self, y):
        nE, nloc = self.M_blocks.shape[:2]
        L = self.M_chol
        z = np.linalg.solve(L, y.reshape(nE, nloc, 1))
        return np.linalg.solve(L.transpose(0, 2, 1), z).reshape(-1)

    def trial_to_test(self, x):
        """The optimal test function M^{-1} B x."""
        return self.M_solve(self.B(x))

    def apply_A(self, x):
        """Matrix-free B^T M^{-1} B x."""
        return self.BT(self.trial_to_test(x))

    def full_u(self, x):
        """Trial solution with the eliminated boundary DOFs filled in as zero."""
        u = np.zeros(self.U.ndofs)
        u[self.free] = x[: self.nu]
        return u


def _test_element_data(mesh, U, Y, Q, elems, kappa, f, qdeg):
    yref = lagrange_element(mesh.kind, Y.degree)
    uref = lagrange_element(mesh.kind, U.degree)
    pts, w = element_rule(mesh.kind, qdeg)
    geo = geometry(mesh, elems, pts)
    gy = physical_grads(geo, yref.grads(pts))
    gu = physical_grads(geo, uref.grads(pts))
    wdet = geo.det * w
    B0 = weighted_products(wdet, gy, gu) * kappa[elems][:, None, None]
    M = h1_element_matrices(Y, elems, qdeg=qdeg)
    if callable(f):
        fx = np.asarray(f(geo.x[..., 0], geo.x[..., 1]), dtype=float)
        fx = np.broadcast_to(fx, geo.det.shape)
    else:
        fx = np.full(geo.det.shape, float(f))
    Fv = (wdet * fx) @ yref.values(pts)
    return B0, M, Fv


def assemble_dpg(mesh: Mesh, p: int, r: int | None = None, kappa=1.0, f=1.0) -> DpgSystem:
    """Assemble the primal DPG system with trial order ``p``.

    U_h is continuous Lagrange of degree ``p`` with zero Dirichlet data, Q_h
    the facet traces of RT_{p-1} (all facets), Y_h broken Lagrange of degree
    ``r`` (default ``p + 1``).  ``f`` is a constant or a callable ``f(x, y)``.
    """
    r = p + 1 if r is None else r
    if r < p:
        raise AssemblyError("test order r must satisfy r >= p")
    kap = _kappa_array(mesh, kappa)
    U = build_space(mesh, LAGRANGE, p)
    Q = build_space(mesh, TRACE, p - 1)
    Y = build_space(mesh, BROKEN, r)
    yref = lagrange_element(mesh.kind, r)
    nY = yref.ndofs
    qdeg = 2 * max(p, r) + 2
    trace_ref = trace_pairing_reference(mesh.kind, p - 1, yref)

    free = U.free_dofs
    reduced = np.full(U.ndofs, -1, dtype=np.int64)
    reduced[free] = np.arange(len(free))
    nu, nq = len(free), Q.ndofs
    nE = mesh.nelems

    M_blocks = np.empty((nE, nY, nY))
    M_chol = np.empty((nE, nY, nY))
    Fvec = np.empty((nE, nY))
    A_parts, B0_parts, B1_parts = [], [], []
    g = np.zeros(nu + nq)
    for el in chunks(nE):
        B0k, Mk, Fk = _test_element_data(mesh, U, Y, Q, el, kap, f, qdeg)
        B1k = trace_ref[None] * Q.elem_signs[el][:, None, :]
        L = np.linalg.cholesky(Mk)
        M_blocks[el], M_chol[el], Fvec[el] = Mk, L, Fk

        ydofs = Y.elem_dofs[el]
        ucols = reduced[U.elem_dofs[el]]
        qcols = Q.elem_dofs[el] + nu
        cols = np.concatenate([ucols, qcols], axis=1)
        keep_u = ucols >= 0

        rows = np.broadcast_to(ydofs[:, :, None], B0k.shape)
        mask = np.broadcast_to(keep_u[:, None, :], B0k.shape)
        B0_parts.append(
            _scatter(rows[mask], np.broadcast_to(ucols[:, None, :], B0k.shape)[mask], B0k[mask], (Y.ndofs, nu))
        )
        rows = np.broadcast_to(ydofs[:, :, None], B1k.shape)
        B1_parts.append(_scatter(rows, np.broadcast_to(qcols[:, None, :] - nu, B1k.shape), B1k, (Y.ndofs, nq)))

        Bk = np.concatenate([B0k, B1k], axis=2)
        W = np.linalg.solve(L, Bk)
        wf = np.linalg.solve(L, Fk[..., None])[..., 0]
        Ak = W.transpose(0, 2, 1) @ W
        Ak = 0.5 * (Ak + Ak.transpose(0, 2, 1))
        gk = (W.transpose(0, 2, 1) @ wf[..., None])[..., 0]
        keep = cols >= 0
        m2 = keep[:, :, None] & keep[:, None, :]
        rr = np.broadcast_to(cols[:, :, None], Ak.shape)
        cc = np.broadcast_to(cols[:, None, :], Ak.shape)
        A_parts.append(_scatter(rr[m2], cc[m2], Ak[m2], (nu + nq, nu + nq)))
        np.add.at(g, cols[keep], gk[keep])

    A = exact_symmetric(sum(A_parts))
    return DpgSystem(
        mesh=mesh,
        U=U,
        Q=Q,
        Y=Y,
        B0=sum(B0_parts).tocsr(),
        B1=sum(B1_parts).tocsr(),
        M_blocks=M_blocks,
        M_chol=M_chol,
        F=Fvec.ravel(),
        bc=U.boundary_dofs,
        kappa=kap,
        A=A,
        g=g,
        free=free,
    )


def h1_error(U: FeSpace, u, exact, grad_exact, qdeg=None) -> float:
    """||u_h - u*||_{H^1} for Lagrange coefficients ``u`` (all DOFs)."""
    mesh = U.mesh
    ref = lagrange_element(mesh.kind, U.degree)
    pts, w = element_rule(mesh.kind, qdeg or 2 * U.degree + 6)
    total = 0.0
    for el in chunks(mesh.nelems):
        geo = geometry(mesh, el, pts)
        c = u[U.elem_dofs[el]]
        uh = np.einsum("qa,ea->eq", ref.values(pts), c)
        gh = np.einsum("eqij,qaj,ea->eqi", geo.inv_t, ref.grads(pts), c)
        x, y = geo.x[..., 0], geo.x[..., 1]
        du = uh - exact(x, y)
        dg = gh - np.stack(grad_exact(x, y), axis=-1)
        total += np.einsum("eq,eq,q->", geo.det, du * du + (dg * dg).sum(-1), w)
    return float(np.sqrt(total))
