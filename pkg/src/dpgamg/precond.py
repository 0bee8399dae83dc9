"""Schur complement of the H(div) Gram and the block DPG preconditioners.

The flux block is preconditioned by an auxiliary-space method that touches
only interface (facet) unknowns:

    B^f x = R^f x + Pi_ff V_Pi(Pi_ff^T x) + C_ff V_C(C_ff^T x),

where ``R^f`` is one symmetric Gauss-Seidel sweep on the target matrix and
``V_Pi``, ``V_C`` are single AMG V-cycles on the projected targets.  In 2D the
curl of a scalar Lagrange function replaces the Nedelec auxiliary space.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import LinearOperator

from .amg import AmgHierarchy, AmgParams, amg_setup, gauss_seidel
from .fem.assembly import assemble_curl, assemble_h1_gram, assemble_hdiv_gram, assemble_pi, exact_symmetric
from .fem.dpg import DpgSystem
from .fem.spaces import LAGRANGE, RT, build_space

log = logging.getLogger(__name__)

IDEAL, PRACTICAL, NONE = "ideal", "practical", "none"
VARIANTS = (IDEAL, PRACTICAL, NONE)
ZERO_COLUMN_TOL = 1e-12
# On uniform meshes the diagonal couplings of the projected vector matrix are
# exactly half the axial ones; a threshold above 0.5 treats them as weak and
# keeps the Galerkin stencils from spreading.
PI_THETA = 0.6


class PrecondError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Schur complement


@dataclass(eq=False)
class _ElimGroup:
    """Interior blocks of equal shape, eliminated together."""

    rows: np.ndarray  # (nb, m) interior indices
    cols: np.ndarray  # (nb, c) coupled interface indices (positions in f)
    chol: np.ndarray  # (nb, m, m) Cholesky factors of D_ii blocks
    Dif: np.ndarray  # (nb, m, c)

    def interior(self, q):
        """-D_ii^{-1} D_if q for every block, shape (nb, m)."""
        rhs = np.einsum("bmc,bc->bm", self.Dif, q[self.cols])[..., None]
        z = np.linalg.solve(self.chol, rhs)
        return -np.linalg.solve(self.chol.transpose(0, 2, 1), z)[..., 0]


@dataclass(eq=False)
class SchurSystem:
    """S = D_ff - D_fi D_ii^{-1} D_if with the element-local elimination data."""

    S: sp.csr_matrix
    D: sp.csr_matrix
    f: np.ndarray
    i: np.ndarray
    groups: list[_ElimGroup] = field(repr=False)

    @property
    def nf(self) -> int:
        return len(self.f)

    def extension(self, q) -> np.ndarray:
        """Full coefficient vector of the discrete minimal extension of ``q``."""
        q = np.asarray(q, dtype=float)
        if q.shape != (self.nf,):
            raise PrecondError("interface vector has the wrong size")
        r = np.zeros(self.D.shape[0])
        r[self.f] = q
        for g in self.groups:
            r[self.i[g.rows]] = g.interior(q)
        return r

    def qh_norm(self, q) -> float:
        """(S q, q), the squared discrete trace norm."""
        q = np.asarray(q, dtype=float)
        if q.shape != (self.nf,):
            raise PrecondError("interface vector has the wrong size")
        return float(q @ (self.S @ q))


def _partition_indices(partition, n):
    labels = np.asarray(partition)
    if labels.shape != (n,):
        raise PrecondError("partition must label every DOF")
    if labels.dtype == bool:
        f = np.flatnonzero(labels)
        i = np.flatnonzero(~labels)
    else:
        ok = np.isin(labels, ["f", "i"])
        if not ok.all():
            raise PrecondError("partition labels must be 'f' or 'i'")
        f = np.flatnonzero(labels == "f")
        i = np.flatnonzero(labels == "i")
    return f, i


def schur_complement(D, partition) -> SchurSystem:
    """Interface Schur complement by local dense elimination.

    ``partition`` holds 'f'/'i' labels (or a boolean interface mask).
    Interior blocks are the connected components of the D_ii graph.
    """
    D = sp.csr_matrix(D)
    f, i = _partition_indices(partition, D.shape[0])
    Dff = D[f][:, f]
    if len(i) == 0:
        return SchurSystem(exact_symmetric(Dff), D, f, i, [])
    Dii = D[i][:, i].tocsr()
    Dif = D[i][:, f].tocsr()
    ncomp, comp = connected_components(Dii, directed=False)
    order = np.argsort(comp, kind="stable")
    bounds = np.searchsorted(comp[order], np.arange(ncomp + 1))
    blocks = {}
    for c in range(ncomp):
        rows = order[bounds[c] : bounds[c + 1]]
        cols = np.unique(Dif[rows].indices)
        blocks.setdefault((len(rows), len(cols)), []).append((rows, cols))
    groups, parts = [], []
    for (m, nc), items in blocks.items():
        R = np.array([r for r, _ in items])
        C = np.array([c for _, c in items]).reshape(len(items), nc)
        Dii_b = _gather(Dii, R, R)
        Dif_b = _gather(Dif, R, C)
        try:
            L = np.linalg.cholesky(Dii_b)
        except np.linalg.LinAlgError as exc:
            raise PrecondError("singular or indefinite interior block") from exc
        X = np.linalg.solve(L, Dif_b)
        upd = X.transpose(0, 2, 1) @ X
        rr = np.broadcast_to(C[:, :, None], upd.shape)
        cc = np.broadcast_to(C[:, None, :], upd.shape)
        parts.append(sp.coo_matrix((upd.ravel(), (rr.ravel(), cc.ravel())), shape=Dff.shape))
        groups.append(_ElimGroup(R, C, L, Dif_b))
    S = exact_symmetric(Dff - sum(parts).tocsr())
    return SchurSystem(S, D, f, i, groups)


def _gather(A, R, C):
    """Dense blocks A[R[b]][:, C[b]] for every block b."""
    nb, m = R.shape
    out = np.empty((nb, m, C.shape[1]))
    for b in range(nb):
        out[b] = A[R[b]][:, C[b]].toarray()
    return out


# ---------------------------------------------------------------------------
# interface auxiliary-space preconditioner


@dataclass(eq=False)
class InterfacePrecond:
    target: sp.csr_matrix
    pi_ff: sp.csr_matrix
    curl_ff: sp.csr_matrix
    amg_pi: AmgHierarchy
    amg_curl: AmgHierarchy

    @property
    def shape(self):
        return self.target.shape

    def smooth(self, x):
        """One symmetric Gauss-Seidel sweep on the target, zero initial guess."""
        A = self.target
        y = np.zeros_like(x)
        gauss_seidel(A.indptr, A.indices, A.data, y, x, True)
        gauss_seidel(A.indptr, A.indices, A.data, y, x, False)
        return y

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = self.smooth(x)
        y += self.pi_ff @ self.amg_pi.vcycle(self.pi_ff.T @ x)
        y += self.curl_ff @ self.amg_curl.vcycle(self.curl_ff.T @ x)
        return y

    def aslinearoperator(self) -> LinearOperator:
        n = self.shape[0]
        return LinearOperator((n, n), matvec=self.apply, rmatvec=self.apply, dtype=float)

    def stats(self) -> dict:
        return {
            "size": int(self.shape[0]),
            "pi_columns": int(self.pi_ff.shape[1]),
            "curl_columns": int(self.curl_ff.shape[1]),
            "amg_pi": self.amg_pi.stats(),
            "amg_curl": self.amg_curl.stats(),
        }


def build_interface_precond(
    target, pi_ff, curl_ff, amg_params=None, pi_functions=None, pi_params=None
) -> InterfacePrecond:
    """Additive auxiliary-space preconditioner on interface DOFs for ``target``.

    ``amg_params`` configures the curl solve, ``pi_params`` (default: the
    same with ``theta = PI_THETA``) the vector solve.
    """
    target = sp.csr_matrix(target)
    target.sort_indices()
    pi_ff, curl_ff = sp.csr_matrix(pi_ff), sp.csr_matrix(curl_ff)
    n = target.shape[0]
    if target.shape != (n, n) or pi_ff.shape[0] != n or curl_ff.shape[0] != n:
        raise PrecondError("dimension mismatch between target and auxiliary maps")
    if np.any(target.diagonal() <= 0.0):
        raise PrecondError("target must have a positive diagonal")
    A_pi = exact_symmetric(pi_ff.T @ target @ pi_ff)
    A_curl = exact_symmetric(curl_ff.T @ target @ curl_ff)
    for name, M in (("Pi", A_pi), ("curl", A_curl)):
        if np.any(M.diagonal() <= 0.0):
            raise PrecondError(f"projected {name} matrix has a zero diagonal entry")
    amg_params = amg_params or AmgParams()
    pi_params = pi_params or replace(amg_params, theta=PI_THETA)
    return InterfacePrecond(
        target,
        pi_ff,
        curl_ff,
        amg_setup(A_pi, pi_params, functions=pi_functions),
        amg_setup(A_curl, amg_params),
    )


@dataclass(eq=False)
class AuxiliaryMaps:
    """Interface blocks of the RT interpolation and curl matrices for facet traces of RT_k."""

    pi_ff: sp.csr_matrix
    curl_ff: sp.csr_matrix
    pi_functions: np.ndarray


def interface_aux_maps(mesh, k: int) -> AuxiliaryMaps:
    """Pi_ff and C_ff for the facet DOFs of RT_k, with Lagrange degree k+1.

    The vector space keeps every interface node (fluxes carry no boundary
    condition) except components invisible to every facet moment, such as
    the tangential component of an edge-interior node; those columns of
    Pi_ff vanish and would leave zero rows in the projected matrix.  One
    vertex of the scalar curl space is dropped: constants have zero curl
    and would make the projected matrix singular.
    """
    rt = build_space(mesh, RT, k)
    lag = build_space(mesh, LAGRANGE, k + 1)
    nfq = mesh.nfacets * (k + 1)
    lf = lag.interface_dofs
    pi_cols = np.concatenate([lf, lf + lag.ndofs])
    funcs = np.repeat([0, 1], len(lf))
    pi_ff = assemble_pi(lag, rt)[:nfq][:, pi_cols].tocsc()
    colmax = abs(pi_ff).max(axis=0).toarray().ravel()
    keep = colmax > ZERO_COLUMN_TOL * colmax.max()
    pi_ff = pi_ff[:, keep].tocsr()
    curl_ff = assemble_curl(lag, rt)[:nfq][:, lf[1:]].tocsr()
    return AuxiliaryMaps(pi_ff, curl_ff, funcs[keep])


# ---------------------------------------------------------------------------
# DPG block preconditioner


@dataclass(eq=False)
class DpgPrecond:
    variant: str
    nu: int
    nq: int
    amg_u: AmgHierarchy | None = None
    flux: InterfacePrecond | None = None
    schur: SchurSystem | None = None
    setup_time: float = 0.0

    @property
    def shape(self):
        n = self.nu + self.nq
        return (n, n)

    def apply(self, x) -> np.ndarray:
        if self.variant == NONE:
            return np.array(x, dtype=float)
        return np.concatenate([self.amg_u.vcycle(x[: self.nu]), self.flux.apply(x[self.nu :])])

    def aslinearoperator(self) -> LinearOperator:
        return LinearOperator(self.shape, matvec=self.apply, rmatvec=self.apply, dtype=float)

    def describe(self) -> dict:
        out = {"variant": self.variant, "nu": self.nu, "nq": self.nq}
        if self.variant != NONE:
            out["primal_block"] = {"kind": "amg_vcycle", **self.amg_u.stats()}
            out["flux_block"] = {
                "kind": "interface_auxiliary_space",
                "target": "schur_complement" if self.variant == IDEAL else "principal_minor_A1",
                **self.flux.stats(),
            }
        return out


def primal_gram(sys: DpgSystem) -> sp.csr_matrix:
    """Matrix for the primal AMG block: H1 Gram, or kappa-stiffness for a varying coefficient."""
    kap = sys.kappa
    if np.all(kap == kap[0]):
        return assemble_h1_gram(sys.U)
    return assemble_h1_gram(sys.U, kappa=kap)


def flux_schur(mesh, k: int) -> SchurSystem:
    rt = build_space(mesh, RT, k)
    return schur_complement(assemble_hdiv_gram(rt), rt.interface)


def build_dpg_precond(sys: DpgSystem, variant: str = PRACTICAL, amg_params=None) -> DpgPrecond:
    """Block-diagonal preconditioner diag(B^o, B^f) for the DPG matrix ``A``.

    ``ideal`` builds the flux block on the Schur complement S of the H(div)
    Gram, ``practical`` on the principal minor A1 of ``A``.
    """
    if variant not in VARIANTS:
        raise PrecondError(f"unknown preconditioner variant {variant!r}")
    t0 = time.perf_counter()
    if variant == NONE:
        return DpgPrecond(NONE, sys.nu, sys.nq)
    amg_params = amg_params or AmgParams()
    k = sys.Q.degree
    amg_u = amg_setup(primal_gram(sys), amg_params)
    schur = None
    if variant == IDEAL:
        schur = flux_schur(sys.mesh, k)
        target = schur.S
    else:
        target = sys.A1
    aux = interface_aux_maps(sys.mesh, k)
    flux = build_interface_precond(target, aux.pi_ff, aux.curl_ff, amg_params, aux.pi_functions)
    return DpgPrecond(variant, sys.nu, sys.nq, amg_u, flux, schur, time.perf_counter() - t0)
