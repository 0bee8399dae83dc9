"""Global finite element spaces and their DOF maps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..mesh import Mesh
from .reference import lagrange_element, rt_element

LAGRANGE = "lagrange"
BROKEN = "broken_lagrange"
RT = "raviart_thomas"
TRACE = "facet_trace"

# public degree ranges; the enriched Q-norm oracle reaches higher RT indices internally
SUPPORTED = {LAGRANGE: range(1, 5), BROKEN: range(1, 6), RT: range(0, 5), TRACE: range(0, 5)}


class SpaceError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FeSpace:
    """A global space on ``mesh``.

    ``elem_dofs[K, a]`` is the global index of local basis function ``a`` on
    element ``K``; the global basis function restricted to ``K`` equals
    ``elem_signs[K, a]`` times the mapped local one.  ``interface`` flags DOFs
    supported on some facet (the ``f`` set); the rest are element interior.
    """

    mesh: Mesh
    family: str
    degree: int
    ndofs: int
    elem_dofs: np.ndarray
    elem_signs: np.ndarray
    interface: np.ndarray
    boundary_dofs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def ref(self):
        if self.family in (LAGRANGE, BROKEN):
            return lagrange_element(self.mesh.kind, self.degree)
        return rt_element(self.mesh.kind, self.degree)

    @property
    def partition(self) -> np.ndarray:
        """'f' / 'i' label per DOF."""
        return np.where(self.interface, "f", "i")

    @property
    def interface_dofs(self) -> np.ndarray:
        return np.flatnonzero(self.interface)

    @property
    def interior_dofs(self) -> np.ndarray:
        return np.flatnonzero(~self.interface)

    @property
    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.ndofs, dtype=bool)
        mask[self.boundary_dofs] = False
        return np.flatnonzero(mask)


def build_space(mesh: Mesh, family: str, degree: int) -> FeSpace:
    if family not in SUPPORTED:
        raise SpaceError(f"unknown family {family!r}")
    if degree not in SUPPORTED[family]:
        raise SpaceError(f"{family} of degree {degree} is not supported")
    if family == LAGRANGE:
        return _lagrange(mesh, degree)
    if family == BROKEN:
        nloc = lagrange_element(mesh.kind, degree).ndofs
        dofs = np.arange(mesh.nelems * nloc).reshape(mesh.nelems, nloc)
        return FeSpace(
            mesh, family, degree, dofs.size, dofs, np.ones(dofs.shape), np.zeros(dofs.size, dtype=bool)
        )
    return _rt_like(mesh, family, degree)


def _lagrange(mesh, p):
    ref = lagrange_element(mesh.kind, p)
    V, E, F = mesh.nverts, mesh.nfacets, mesh.nelems
    ne, ni = p - 1, ref.n_interior
    nv = mesh.verts_per_elem
    cols = [mesh.elements]
    m = np.arange(ne)
    for l in range(nv):
        fac = mesh.elem_facets[:, l][:, None]
        flip = mesh.elem_facet_flip[:, l][:, None]
        cols.append(V + fac * ne + np.where(flip, ne - 1 - m, m))
    cols.append(V + E * ne + np.arange(F)[:, None] * ni + np.arange(ni))
    dofs = np.hstack(cols).astype(np.int64)
    ndofs = V + E * ne + F * ni
    interface = np.zeros(ndofs, dtype=bool)
    interface[: V + E * ne] = True
    bf = mesh.boundary_facets
    bdofs = np.concatenate(
        [mesh.boundary_vertices, (V + bf[:, None] * ne + m).ravel()]
    )
    return FeSpace(
        mesh, LAGRANGE, p, ndofs, dofs, np.ones(dofs.shape), interface, np.unique(bdofs).astype(np.int64)
    )


def _rt_like(mesh, family, k):
    E, F = mesh.nfacets, mesh.nelems
    nv = mesh.verts_per_elem
    j = np.arange(k + 1)
    parity = np.where(j % 2 == 1, -1.0, 1.0)
    dof_cols, sign_cols = [], []
    for l in range(nv):
        fac = mesh.elem_facets[:, l][:, None]
        flip = mesh.elem_facet_flip[:, l][:, None]
        dof_cols.append(fac * (k + 1) + j)
        sign_cols.append(mesh.elem_facet_sign[:, l][:, None] * np.where(flip, parity, 1.0))
    ndofs = E * (k + 1)
    if family == RT:
        ni = rt_element(mesh.kind, k).n_interior
        dof_cols.append(ndofs + np.arange(F)[:, None] * ni + np.arange(ni))
        sign_cols.append(np.ones((F, ni)))
        ndofs += F * ni
    dofs = np.hstack(dof_cols).astype(np.int64)
    signs = np.hstack(sign_cols)
    interface = np.zeros(ndofs, dtype=bool)
    interface[: E * (k + 1)] = True
    return FeSpace(mesh, family, k, ndofs, dofs, signs, interface)


@dataclass(frozen=True)
class Geometry:
    """Element maps evaluated at reference points for a batch of elements."""

    x: np.ndarray  # (nE, nq, 2)
    jac: np.ndarray  # (nE, nq, 2, 2)  d x_i / d xhat_j
    det: np.ndarray  # (nE, nq)

    @property
    def inv_t(self):
        """Inverse-transpose Jacobian, (nE, nq, 2, 2)."""
        J = self.jac
        inv = np.empty_like(J)
        inv[..., 0, 0] = J[..., 1, 1]
        inv[..., 1, 1] = J[..., 0, 0]
        inv[..., 0, 1] = -J[..., 1, 0]
        inv[..., 1, 0] = -J[..., 0, 1]
        return inv / self.det[..., None, None]


def geometry(mesh: Mesh, elems, pts) -> Geometry:
    pts = np.asarray(pts, dtype=float)
    X = mesh.vertices[mesh.elements[elems]]  # (nE, nv, 2)
    xi, eta = pts[:, 0], pts[:, 1]
    if mesh.kind == "tri":
        N = np.stack([1 - xi - eta, xi, eta], axis=1)
        dN = np.broadcast_to(np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]), (len(pts), 3, 2))
    else:
        N = np.stack([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta], axis=1)
        dN = np.stack(
            [
                np.stack([-(1 - eta), -(1 - xi)], axis=1),
                np.stack([1 - eta, -xi], axis=1),
                np.stack([eta, xi], axis=1),
                np.stack([-eta, 1 - xi], axis=1),
            ],
            axis=1,
        )
    x = np.einsum("qa,ead->eqd", N, X)
    jac = np.einsum("qaj,eai->eqij", dN, X)
    det = jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]
    return Geometry(x, jac, det)
