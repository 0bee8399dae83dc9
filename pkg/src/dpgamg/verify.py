"""Numerical oracles for the norm equivalences behind the preconditioner.

* ``reference_extension_G``: the explicit constant-trace extension on the
  reference triangle (incenter construction) and square (centroid).
* ``enriched_qnorm``: discrete minimal extensions in a richer space (higher RT
  index on an element-local refinement), a computable stand-in for the
  continuous trace norm.
* ``interface_decomposition``: transfers a volumetric stable decomposition to
  interface unknowns through the minimal-extension matrix.
* ``energy_identity_defect``, ``constrained_minimum`` and
  ``structural_zero_blocks``: direct algebraic checks of the assembled
  matrices.
* ``estimate_infsup``: extreme generalized eigenvalues of the DPG matrix
  against the product norm diag(G, S).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .fem.assembly import assemble_curl, assemble_hdiv_gram, assemble_pi, exact_symmetric
from .fem.dpg import DpgSystem
from .fem.quadrature import element_rule, line_rule, shifted_legendre
from .fem.reference import MAX_RT, ref_edges, rt_element
from .fem.spaces import LAGRANGE, RT, TRACE, build_space
from .linalg import DENSE_LIMIT, dense_generalized_eig
from .mesh import Mesh, refine
from .precond import SchurSystem, _partition_indices, schur_complement


class VerifyError(ValueError):
    pass


# ---------------------------------------------------------------------------
# constant-trace extension on the reference element


@dataclass(frozen=True)
class ReferenceExtension:
    """The field (sigma_bar / d) (x - x_I) on a reference element.

    Every edge lies at distance ``d`` from ``x_I``, so the outward normal
    component is ``sigma_bar`` on the whole boundary.
    """

    kind: str
    sigma_bar: float
    center: np.ndarray
    d: float

    def values(self, pts) -> np.ndarray:
        return (self.sigma_bar / self.d) * (np.asarray(pts, dtype=float) - self.center)

    @property
    def divergence(self) -> float:
        return 2.0 * self.sigma_bar / self.d

    def normal_traces(self, npts: int = 7) -> np.ndarray:
        """Outward normal component at ``npts`` points on every edge, shape (nedges, npts)."""
        s = np.linspace(0.0, 1.0, npts)
        out = []
        for a, b, n, _ in ref_edges(self.kind):
            out.append(self.values(a + s[:, None] * (b - a)) @ n)
        return np.array(out)

    def hdiv_norm_sq(self) -> float:
        pts, w = element_rule(self.kind, 4)
        v = self.values(pts)
        return float(w @ (v * v).sum(axis=1) + w.sum() * self.divergence**2)


def reference_extension_G(sigma_bar: float, element: str) -> ReferenceExtension:
    """Extension of a constant normal trace ``sigma_bar`` into the reference ``element``.

    Triangle: x_I is the incenter of (0,0), (1,0), (0,1) and d its inradius
    1/(2+sqrt 2).  Square: x_I = (1/2, 1/2) and d = 1/2, i.e. 2 (x - x_I) sigma_bar.
    """
    if element == "tri":
        d = 1.0 / (2.0 + np.sqrt(2.0))
        return ReferenceExtension("tri", float(sigma_bar), np.array([d, d]), d)
    if element == "quad":
        return ReferenceExtension("quad", float(sigma_bar), np.array([0.5, 0.5]), 0.5)
    raise VerifyError(f"unsupported reference element {element!r}")


def extension_ratios(kind: str, k: int, nsamples: int, seed: int = 0) -> np.ndarray:
    """||G sigma_bar||_{H(div)} / ||div sigma||_{L2} for random RT_k fields sigma.

    ``sigma_bar`` is the mean outward flux of sigma over the boundary.  The
    ratios are bounded by a constant that depends only on the shape.
    """
    ref = rt_element(kind, k)
    rng = np.random.default_rng(seed)
    coef = rng.standard_normal((nsamples, ref.ndofs))
    perim = sum(e[3] for e in ref_edges(kind))
    # the j=0 edge moment is the flux through that edge
    flux = coef[:, [l * (k + 1) for l in range(ref.nedges)]].sum(axis=1)
    pts, w = element_rule(kind, 2 * k + 2)
    div = coef @ ref.divergence(pts).T
    div_norm = np.sqrt((div * div) @ w)
    g1 = reference_extension_G(1.0, kind).hdiv_norm_sq()
    return np.abs(flux / perim) * np.sqrt(g1) / div_norm


# ---------------------------------------------------------------------------
# enriched trace norm


def _local_enriched_schur(verts: np.ndarray, kind: str, k: int, dk: int, dref: int) -> np.ndarray:
    """Minimal H(div) energy on one element as a matrix in local trace coordinates.

    Local coordinates: edge l, moment j against L_j in the local edge
    direction, outward normal (the reference RT edge DOFs).
    """
    nv = len(verts)
    sub = refine(Mesh(verts, np.arange(nv)[None, :], kind, np.zeros(1, dtype=np.int64)), dref)
    kk = k + dk
    rt = build_space(sub, RT, kk)
    D = assemble_hdiv_gram(rt)
    bf = sub.boundary_facets
    s, w = line_rule(2 * kk + 2)
    Lsub = shifted_legendre(kk, s)
    nloc = nv * (k + 1)
    T = np.zeros((rt.ndofs, nloc))
    constrained = np.zeros(rt.ndofs, dtype=bool)
    normals = sub.facet_normals()
    for e in bf:
        a, b = sub.vertices[sub.facets[e]]
        mid = 0.5 * (a + b)
        length = np.hypot(*(b - a))
        normal = normals[e]
        for l in range(nv):
            p0, p1 = verts[l], verts[(l + 1) % nv]
            t = p1 - p0
            if abs(t[0] * (mid - p0)[1] - t[1] * (mid - p0)[0]) <= 1e-10 * (t @ t):
                break
        else:  # pragma: no cover - boundary facets always lie on an edge
            raise VerifyError("sub-facet not on the element boundary")
        out = np.array([t[1], -t[0]]) / np.hypot(*t)
        orient = float(np.sign(out @ normal))
        x = a + s[:, None] * (b - a)
        sl = ((x - p0) @ t) / (t @ t)
        # outward flux of trace basis (l, i) is (2i+1)/|e_l| L_i(sl)
        basis = shifted_legendre(k, sl) * (2 * np.arange(k + 1) + 1) / np.hypot(*t)
        rows = e * (kk + 1) + np.arange(kk + 1)
        T[np.ix_(rows, l * (k + 1) + np.arange(k + 1))] = orient * length * np.einsum(
            "q,qj,qi->ji", w, Lsub, basis
        )
        constrained[rows] = True
    c = np.flatnonzero(constrained)
    free = np.flatnonzero(~constrained)
    Dd = D.toarray()
    Dcc = Dd[np.ix_(c, c)]
    if len(free):
        Dcf = Dd[np.ix_(c, free)]
        Sc = Dcc - Dcf @ scipy.linalg.solve(Dd[np.ix_(free, free)], Dcf.T, assume_a="pos")
    else:
        Sc = Dcc
    Tc = T[c]
    Sloc = Tc.T @ Sc @ Tc
    return 0.5 * (Sloc + Sloc.T)


def enriched_qnorm_matrix(mesh: Mesh, k: int, enrichment=(0, 0)) -> sp.csr_matrix:
    """Matrix of q -> min ||tau||^2_{H(div)} over the enriched extension space.

    ``enrichment = (dk, drefine)``: the extension uses RT_{k+dk} on ``drefine``
    uniform refinements of every element, with the normal trace on each
    original facet fixed to q.  Element shapes are cached, so structured
    meshes cost one local solve per distinct shape.
    """
    dk, dref = (int(x) for x in enrichment)
    if dk < 0 or dref < 0:
        raise VerifyError("enrichment must not remove trace functions")
    if k + dk > MAX_RT:
        raise VerifyError(f"RT index {k + dk} exceeds the supported maximum {MAX_RT}")
    Q = build_space(mesh, TRACE, k)
    cache: dict = {}
    nloc = Q.elem_dofs.shape[1]
    blocks = np.empty((mesh.nelems, nloc, nloc))
    for e in range(mesh.nelems):
        verts = mesh.vertices[mesh.elements[e]]
        key = tuple(np.round(verts - verts[0], 12).ravel())
        if key not in cache:
            cache[key] = _local_enriched_schur(verts, mesh.kind, k, dk, dref)
        blocks[e] = cache[key]
    sg = Q.elem_signs
    vals = blocks * sg[:, :, None] * sg[:, None, :]
    rows = np.broadcast_to(Q.elem_dofs[:, :, None], vals.shape)
    cols = np.broadcast_to(Q.elem_dofs[:, None, :], vals.shape)
    A = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(Q.ndofs, Q.ndofs)).tocsr()
    return exact_symmetric(A)


def enriched_qnorm(q, mesh: Mesh, k: int, enrichment=(0, 0)) -> float:
    """Squared enriched trace norm of the facet-trace coefficient vector ``q``."""
    q = np.asarray(q, dtype=float)
    S = enriched_qnorm_matrix(mesh, k, enrichment)
    if q.shape != (S.shape[0],):
        raise VerifyError("trace vector has the wrong size")
    return float(q @ (S @ q))


def c3_surrogate(mesh: Mesh, k: int, enrichment=(2, 2), schur: SchurSystem | None = None) -> dict:
    """Bracket of the discrete trace norm against an enriched one.

    Returns the extreme eigenvalues of (S_base, S_enriched).  The smallest
    must be >= 1 (nested spaces); sqrt of the largest is the measured c3.
    """
    if schur is None:
        rt = build_space(mesh, RT, k)
        schur = schur_complement(assemble_hdiv_gram(rt), rt.interface)
    S_enr = enriched_qnorm_matrix(mesh, k, enrichment)
    lam = dense_generalized_eig(schur.S, S_enr)
    return {"lambda_min": float(lam[0]), "lambda_max": float(lam[-1]), "c3": float(np.sqrt(lam[-1]))}


# ---------------------------------------------------------------------------
# interface decomposition


@dataclass
class DecompositionWitness:
    """u_f = v + sum_k [H_k r_k]_f together with its energy bookkeeping."""

    v: np.ndarray
    r_list: list[np.ndarray]
    lhs: float
    quad_form: float
    volumetric_lhs: float
    volumetric_quad_form: float

    @property
    def constant(self) -> float:
        return self.lhs / self.quad_form if self.quad_form > 0 else 0.0

    @property
    def volumetric_constant(self) -> float:
        return self.volumetric_lhs / self.volumetric_quad_form if self.volumetric_quad_form > 0 else 0.0

    @property
    def rhs_ref(self) -> float:
        """Volumetric constant times the interface quadratic form."""
        return self.volumetric_constant * self.quad_form


def _decomp_energy(D, diag, v, H_list, r_list):
    e = float(v @ (diag * v))
    for H, r in zip(H_list, r_list):
        z = H @ r
        e += float(z @ (D @ z))
    return e


def exact_volumetric_decomposer(D, H_list) -> Callable:
    """Decomposer minimizing (diag(D) v, v) + sum (D H_k r_k, H_k r_k) subject to u = v + sum H_k r_k.

    Eliminating v gives an unconstrained least-squares problem in the
    stacked r; its normal equations are solved densely (minimum-norm
    solution when singular).
    """
    D = np.asarray(D.toarray() if sp.issparse(D) else D, dtype=float)
    H_list = [np.asarray(H.toarray() if sp.issparse(H) else H, dtype=float) for H in H_list]
    diag = np.diag(D)
    sizes = [H.shape[1] for H in H_list]

    def decompose(u):
        u = np.asarray(u, dtype=float)
        if not H_list:
            return u.copy(), []
        Hs = np.hstack(H_list)
        K = Hs.T @ (diag[:, None] * Hs)
        K += scipy.linalg.block_diag(*[H.T @ D @ H for H in H_list])
        rhs = Hs.T @ (diag * u)
        r = scipy.linalg.lstsq(K, rhs)[0]
        r_list = np.split(r, np.cumsum(sizes)[:-1])
        return u - Hs @ r, list(r_list)

    return decompose


def interface_decomposition(
    D, H_list: Sequence, partition, u_f, volumetric_decomposer: Callable
) -> DecompositionWitness:
    """Interface witness built from a volumetric one applied to w = E u_f."""
    D = np.asarray(D.toarray() if sp.issparse(D) else D, dtype=float)
    H_list = [np.asarray(H.toarray() if sp.issparse(H) else H, dtype=float) for H in H_list]
    schur = schur_complement(sp.csr_matrix(D), partition)
    u_f = np.asarray(u_f, dtype=float)
    w = schur.extension(u_f)
    v, r_list = volumetric_decomposer(w)
    recon = v + sum((H @ r for H, r in zip(H_list, r_list)), np.zeros_like(w))
    if np.linalg.norm(recon - w) > 1e-12 * max(np.linalg.norm(w), 1.0):
        raise VerifyError("volumetric decomposer violates its reconstruction identity")
    diagD = np.diag(D)
    vol_lhs = _decomp_energy(D, diagD, v, H_list, r_list)
    f = schur.f
    S = schur.S.toarray()
    v_f = v[f]
    lhs = float(v_f @ (np.diag(S) * v_f))
    for H, r in zip(H_list, r_list):
        z = (H @ r)[f]
        lhs += float(z @ (S @ z))
    return DecompositionWitness(
        v=v_f,
        r_list=[np.asarray(r) for r in r_list],
        lhs=lhs,
        quad_form=float(u_f @ (S @ u_f)),
        volumetric_lhs=vol_lhs,
        volumetric_quad_form=float(w @ (D @ w)),
    )


# ---------------------------------------------------------------------------
# inf-sup estimate


def estimate_infsup(sys: DpgSystem, G, S: SchurSystem) -> tuple[float, float]:
    """Extreme generalized eigenvalues of (A, diag(G, S))."""
    n = sys.n
    if n > DENSE_LIMIT:
        raise VerifyError(f"dense budget of {DENSE_LIMIT} unknowns exceeded ({n})")
    if G.shape[0] != sys.nu or S.S.shape[0] != sys.nq:
        raise VerifyError("norm matrices do not match the DPG unknowns")
    N = sp.block_diag([G, S.S]).toarray()
    lam = dense_generalized_eig(sys.A.toarray(), N)
    return float(lam[0]), float(lam[-1])


# ---------------------------------------------------------------------------
# direct algebraic checks


def energy_identity_defect(sys: DpgSystem, x) -> float:
    """Relative gap between (A x, x) and ||M^{-1} B x||_M^2.

    The right side is evaluated matrix-free from the element blocks of B and
    M, so it does not share the explicit product stored in ``sys.A``.
    """
    x = np.asarray(x, dtype=float)
    a = float(x @ (sys.A @ x))
    w = sys.trial_to_test(x)
    m = float(w @ sys.M_apply(w))
    if a <= 0.0:
        raise VerifyError("(A x, x) must be positive for a nonzero x")
    return abs(a - m) / a


def constrained_minimum(D, partition, q) -> float:
    """min (D tau, tau) over all tau whose interface part equals ``q``.

    Solved through the dense saddle-point system with the constraint
    written as a selection matrix, independently of any block elimination.
    """
    D = np.asarray(D.toarray() if sp.issparse(D) else D, dtype=float)
    n = D.shape[0]
    if n > DENSE_LIMIT:
        raise VerifyError(f"dense budget of {DENSE_LIMIT} unknowns exceeded ({n})")
    f, _ = _partition_indices(partition, n)
    q = np.asarray(q, dtype=float)
    C = np.zeros((len(f), n))
    C[np.arange(len(f)), f] = 1.0
    K = np.block([[D, C.T], [C, np.zeros((len(f), len(f)))]])
    rhs = np.concatenate([np.zeros(n), q])
    tau = np.linalg.solve(K, rhs)[:n]
    return float(tau @ (D @ tau))


def structural_zero_blocks(mesh: Mesh, k: int) -> dict:
    """Largest entries of the interface-row / interior-column blocks of Pi and C.

    Both must be exactly zero: an interior Lagrange node has no support on
    any facet, so every facet moment of its basis function vanishes.
    """
    lag = build_space(mesh, LAGRANGE, k + 1)
    rt = build_space(mesh, RT, k)
    Pi = assemble_pi(lag, rt).tocsr()
    C = assemble_curl(lag, rt).tocsr()
    f = rt.interface_dofs
    pi_cols = np.flatnonzero(~np.tile(lag.interface, 2))
    c_cols = lag.interior_dofs
    pi_block = Pi[f][:, pi_cols]
    c_block = C[f][:, c_cols]
    return {
        "pi": float(abs(pi_block).max()) if pi_block.nnz else 0.0,
        "curl": float(abs(c_block).max()) if c_block.nnz else 0.0,
        "pi_interior_columns": int(len(pi_cols)),
        "curl_interior_columns": int(len(c_cols)),
    }
