"""Classical (Ruge-Stueben) algebraic multigrid.

Setup: classical strength of connection on negative off-diagonals, two-pass
C/F splitting, direct interpolation, Galerkin coarse operators ``P^T A P``.
Cycle: V(1,1) with forward Gauss-Seidel before restriction and backward
Gauss-Seidel after prolongation, which makes the cycle a symmetric operator.

Systems (e.g. vector-valued auxiliary spaces) are handled with the
"unknown" approach: pass ``functions`` labelling each row, and couplings
between different labels are ignored for coarsening and interpolation.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numba as nb
import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from .fem.assembly import exact_symmetric

log = logging.getLogger(__name__)

U_PT, F_PT, C_PT = 0, 1, 2


class AmgError(ValueError):
    pass


@dataclass(frozen=True)
class AmgParams:
    theta: float = 0.25
    max_coarse: int = 64
    max_levels: int = 25
    presmooth: int = 1
    postsmooth: int = 1
    second_pass: bool = True
    strength: str = "classical"  # classical (negative couplings) | abs (all couplings)
    positive_interp: bool = False  # True: interpolate from positively coupled C points


@dataclass(eq=False)
class AmgLevel:
    A: sp.csr_matrix
    P: sp.csr_matrix | None = None
    R: sp.csr_matrix | None = None
    splitting: np.ndarray | None = None
    functions: np.ndarray | None = None


@dataclass(eq=False)
class AmgHierarchy:
    levels: list[AmgLevel]
    params: AmgParams
    coarse_factor: tuple | None = None
    coarse_pinv: np.ndarray | None = field(default=None, repr=False)

    @property
    def nlevels(self) -> int:
        return len(self.levels)

    @property
    def sizes(self) -> list[int]:
        return [lvl.A.shape[0] for lvl in self.levels]

    @property
    def operator_complexity(self) -> float:
        nnz = [lvl.A.nnz for lvl in self.levels]
        return float(sum(nnz) / nnz[0]) if nnz[0] else 1.0

    @property
    def grid_complexity(self) -> float:
        s = self.sizes
        return float(sum(s) / s[0]) if s[0] else 1.0

    def stats(self) -> dict:
        return {
            "levels": self.nlevels,
            "sizes": self.sizes,
            "nnz": [int(lvl.A.nnz) for lvl in self.levels],
            "operator_complexity": self.operator_complexity,
            "grid_complexity": self.grid_complexity,
            "params": asdict(self.params),
        }

    def stats_json(self) -> str:
        return json.dumps(self.stats(), indent=2)

    def coarse_solve(self, b):
        if self.coarse_factor is not None:
            return scipy.linalg.cho_solve(self.coarse_factor, b)
        return self.coarse_pinv @ b

    def vcycle(self, b) -> np.ndarray:
        return amg_vcycle(self, b)

    def aslinearoperator(self) -> LinearOperator:
        n = self.levels[0].A.shape[0]
        return LinearOperator((n, n), matvec=self.vcycle, rmatvec=self.vcycle, dtype=float)


# ---------------------------------------------------------------------------
# numba kernels


@nb.njit(cache=True)
def _strength(indptr, indices, data, funcs, theta, use_abs):
    """Classical strength: j strongly influences i if -a_ij >= theta * max_k(-a_ik).

    With ``use_abs`` the magnitude |a_ij| is compared instead.
    """
    n = len(indptr) - 1
    data = np.abs(data) * -1.0 if use_abs else data
    sp_ = np.zeros(n + 1, dtype=np.int64)
    sj = np.empty(len(indices), dtype=np.int64)
    nnz = 0
    for i in range(n):
        m = 0.0
        for jj in range(indptr[i], indptr[i + 1]):
            j = indices[jj]
            if j != i and funcs[j] == funcs[i] and -data[jj] > m:
                m = -data[jj]
        if m > 0.0:
            thr = theta * m
            for jj in range(indptr[i], indptr[i + 1]):
                j = indices[jj]
                if j != i and funcs[j] == funcs[i] and -data[jj] >= thr:
                    sj[nnz] = j
                    nnz += 1
        sp_[i + 1] = nnz
    return sp_, sj[:nnz]


@nb.njit(cache=True)
def _bucket_remove(i, lam, head, nxt, prv):
    b = lam[i]
    if prv[i] >= 0:
        nxt[prv[i]] = nxt[i]
    else:
        head[b] = nxt[i]
    if nxt[i] >= 0:
        prv[nxt[i]] = prv[i]
    nxt[i] = -1
    prv[i] = -1


@nb.njit(cache=True)
def _bucket_insert(i, lam, head, nxt, prv):
    b = lam[i]
    nxt[i] = head[b]
    prv[i] = -1
    if head[b] >= 0:
        prv[head[b]] = i
    head[b] = i


@nb.njit(cache=True)
def _rs_first_pass(sp_, sj, tp, tj):
    """Greedy C/F splitting by largest measure |S^T_i| with measure updates."""
    n = len(sp_) - 1
    split = np.zeros(n, dtype=np.int8)
    lam = np.empty(n, dtype=np.int64)
    maxdeg = 0
    for i in range(n):
        lam[i] = tp[i + 1] - tp[i]
        if lam[i] > maxdeg:
            maxdeg = lam[i]
    # a measure can at most double: each dependent point turns F only once
    nb_ = 2 * maxdeg + 2
    head = -np.ones(nb_, dtype=np.int64)
    nxt = -np.ones(n, dtype=np.int64)
    prv = -np.ones(n, dtype=np.int64)
    for i in range(n - 1, -1, -1):
        if lam[i] == 0:
            split[i] = F_PT  # influences nobody
        else:
            _bucket_insert(i, lam, head, nxt, prv)
    top = nb_ - 1
    while True:
        while top > 0 and head[top] < 0:
            top -= 1
        if top <= 0:
            break
        i = head[top]
        _bucket_remove(i, lam, head, nxt, prv)
        split[i] = C_PT
        for jj in range(tp[i], tp[i + 1]):
            j = tj[jj]
            if split[j] != U_PT:
                continue
            _bucket_remove(j, lam, head, nxt, prv)
            split[j] = F_PT
            for kk in range(sp_[j], sp_[j + 1]):
                k = sj[kk]
                if split[k] == U_PT:
                    _bucket_remove(k, lam, head, nxt, prv)
                    lam[k] += 1
                    _bucket_insert(k, lam, head, nxt, prv)
                    if lam[k] > top:
                        top = lam[k]
        for jj in range(sp_[i], sp_[i + 1]):
            j = sj[jj]
            if split[j] == U_PT:
                _bucket_remove(j, lam, head, nxt, prv)
                lam[j] -= 1
                if lam[j] > 0:
                    _bucket_insert(j, lam, head, nxt, prv)
                else:
                    split[j] = F_PT
    for i in range(n):
        if split[i] == U_PT:
            split[i] = F_PT
    return split


@nb.njit(cache=True)
def _rs_second_pass(sp_, sj, split):
    """Promote strong F-F neighbours without a common strong C point to C."""
    n = len(sp_) - 1
    mark = -np.ones(n, dtype=np.int64)
    for i in range(n):
        if split[i] != F_PT:
            continue
        for jj in range(sp_[i], sp_[i + 1]):
            j = sj[jj]
            if split[j] == C_PT:
                mark[j] = i
        for jj in range(sp_[i], sp_[i + 1]):
            j = sj[jj]
            if split[j] != F_PT:
                continue
            common = False
            for kk in range(sp_[j], sp_[j + 1]):
                if mark[sj[kk]] == i and split[sj[kk]] == C_PT:
                    common = True
                    break
            if not common:
                split[j] = C_PT
                mark[j] = i
    return split


@nb.njit(cache=True)
def _direct_interp(indptr, indices, data, funcs, sp_, sj, split, cmap, use_pos):
    n = len(indptr) - 1
    strong = np.zeros(n, dtype=np.int64) - 1
    rowptr = np.zeros(n + 1, dtype=np.int64)
    cap = 0
    for i in range(n):
        cap += 1 if split[i] == C_PT else (sp_[i + 1] - sp_[i]) + (indptr[i + 1] - indptr[i])
    cols = np.empty(cap, dtype=np.int64)
    vals = np.empty(cap)
    nnz = 0
    for i in range(n):
        if split[i] == C_PT:
            cols[nnz] = cmap[i]
            vals[nnz] = 1.0
            nnz += 1
            rowptr[i + 1] = nnz
            continue
        for jj in range(sp_[i], sp_[i + 1]):
            strong[sj[jj]] = i
        diag = 0.0
        sum_neg = 0.0
        sum_pos = 0.0
        sum_neg_p = 0.0
        sum_pos_p = 0.0
        for jj in range(indptr[i], indptr[i + 1]):
            j = indices[jj]
            a = data[jj]
            if j == i:
                diag += a
                continue
            if funcs[j] != funcs[i]:
                continue
            if a < 0.0:
                sum_neg += a
                if split[j] == C_PT and strong[j] == i:
                    sum_neg_p += a
            else:
                sum_pos += a
                if use_pos and split[j] == C_PT:
                    sum_pos_p += a
        if sum_pos_p == 0.0:
            diag += sum_pos  # lump positive couplings into the diagonal
        alpha = sum_neg / sum_neg_p if sum_neg_p != 0.0 else 0.0
        beta = sum_pos / sum_pos_p if sum_pos_p != 0.0 else 0.0
        for jj in range(indptr[i], indptr[i + 1]):
            j = indices[jj]
            a = data[jj]
            if j == i or funcs[j] != funcs[i] or split[j] != C_PT:
                continue
            if a < 0.0 and strong[j] == i:
                w = -alpha * a / diag
            elif a > 0.0 and sum_pos_p != 0.0:
                w = -beta * a / diag
            else:
                continue
            cols[nnz] = cmap[j]
            vals[nnz] = w
            nnz += 1
        rowptr[i + 1] = nnz
    return rowptr, cols[:nnz], vals[:nnz]


@nb.njit(cache=True)
def gauss_seidel(indptr, indices, data, x, b, forward):
    """One in-place Gauss-Seidel sweep in natural (forward) or reverse row order."""
    n = len(b)
    if forward:
        start, stop, step = 0, n, 1
    else:
        start, stop, step = n - 1, -1, -1
    for i in range(start, stop, step):
        s = b[i]
        d = 0.0
        for jj in range(indptr[i], indptr[i + 1]):
            j = indices[jj]
            if j == i:
                d += data[jj]
            else:
                s -= data[jj] * x[j]
        x[i] = s / d


# ---------------------------------------------------------------------------


def _check_input(A):
    if not sp.issparse(A):
        raise AmgError("AMG needs a sparse matrix")
    A = sp.csr_matrix(A, dtype=float)
    A.sum_duplicates()
    A.sort_indices()
    if A.shape[0] != A.shape[1]:
        raise AmgError("matrix must be square")
    if (A != A.T).nnz:
        raise AmgError("matrix is not symmetric")
    if np.any(A.diagonal() <= 0.0):
        raise AmgError("matrix has zero or negative diagonal entries")
    return A


def cf_splitting(A: sp.csr_matrix, theta=0.25, functions=None, second_pass=True, strength="classical"):
    """C/F labels (True = coarse) and the strength matrix pattern."""
    n = A.shape[0]
    funcs = np.zeros(n, dtype=np.int64) if functions is None else np.asarray(functions, dtype=np.int64)
    if strength not in ("classical", "abs"):
        raise AmgError(f"unknown strength measure {strength!r}")
    sp_, sj = _strength(A.indptr, A.indices, A.data, funcs, float(theta), strength == "abs")
    S = sp.csr_matrix((np.ones(len(sj)), sj, sp_), shape=A.shape)
    T = S.T.tocsr()
    T.sort_indices()
    split = _rs_first_pass(sp_, sj, T.indptr.astype(np.int64), T.indices.astype(np.int64))
    if second_pass:
        split = _rs_second_pass(sp_, sj, split)
    return split == C_PT, S


def direct_interpolation(A: sp.csr_matrix, S: sp.csr_matrix, coarse: np.ndarray, functions=None, positive=False):
    n = A.shape[0]
    funcs = np.zeros(n, dtype=np.int64) if functions is None else np.asarray(functions, dtype=np.int64)
    split = np.where(coarse, C_PT, F_PT).astype(np.int8)
    cmap = np.cumsum(coarse) - 1
    rowptr, cols, vals = _direct_interp(
        A.indptr, A.indices, A.data, funcs, S.indptr.astype(np.int64), S.indices.astype(np.int64), split, cmap, bool(positive)
    )
    return sp.csr_matrix((vals, cols, rowptr), shape=(n, int(coarse.sum())))


def amg_setup(A, params: AmgParams | None = None, functions=None) -> AmgHierarchy:
    """Build a classical AMG hierarchy for the SPD matrix ``A``."""
    params = params or AmgParams()
    A = _check_input(A)
    funcs = None if functions is None else np.asarray(functions, dtype=np.int64)
    if funcs is not None and len(funcs) != A.shape[0]:
        raise AmgError("functions must label every row")
    levels = [AmgLevel(A, functions=funcs)]
    while len(levels) < params.max_levels and levels[-1].A.shape[0] > params.max_coarse:
        lvl = levels[-1]
        coarse, S = cf_splitting(lvl.A, params.theta, lvl.functions, params.second_pass, params.strength)
        nc = int(coarse.sum())
        if nc == 0 or nc == lvl.A.shape[0]:
            break
        P = direct_interpolation(lvl.A, S, coarse, lvl.functions, params.positive_interp)
        R = P.T.tocsr()
        Ac = exact_symmetric(R @ lvl.A @ P)
        Ac.sort_indices()
        lvl.P, lvl.R, lvl.splitting = P, R, coarse
        levels.append(AmgLevel(Ac, functions=None if lvl.functions is None else lvl.functions[coarse]))
    H = AmgHierarchy(levels, params)
    Ac = levels[-1].A.toarray()
    try:
        H.coarse_factor = scipy.linalg.cho_factor(Ac, lower=True)
    except np.linalg.LinAlgError:
        # auxiliary projections of the interface operator can be semidefinite
        log.info("coarsest matrix is singular; using a pseudo-inverse")
        H.coarse_pinv = scipy.linalg.pinvh(Ac)
    return H


def amg_vcycle(H: AmgHierarchy, b) -> np.ndarray:
    """Apply one V(1,1) cycle with zero initial guess."""
    b = np.asarray(b, dtype=float)
    if b.shape != (H.levels[0].A.shape[0],):
        raise AmgError("vector size does not match the finest level")
    return _cycle(H, 0, b)


def _cycle(H, k, b):
    lvl = H.levels[k]
    if k == H.nlevels - 1:
        return H.coarse_solve(b)
    A = lvl.A
    x = np.zeros_like(b)
    for _ in range(H.params.presmooth):
        gauss_seidel(A.indptr, A.indices, A.data, x, b, True)
    r = b - A @ x
    x += lvl.P @ _cycle(H, k + 1, lvl.R @ r)
    for _ in range(H.params.postsmooth):
        gauss_seidel(A.indptr, A.indices, A.data, x, b, False)
    return x
