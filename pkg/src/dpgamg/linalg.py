"""Krylov solver, dense oracles and small operator utilities.

Sparse storage is ``scipy.sparse.csr_matrix`` throughout; composite operators
are ``scipy.sparse.linalg.LinearOperator`` instances.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, aslinearoperator

DENSE_LIMIT = 4000


@dataclass
class PcgReport:
    iterations: int
    residual_history: list[float]
    avg_reduction: float
    converged: bool
    wall_time: float
    status: str = "converged"  # converged | maxit | breakdown | drift
    final_residual: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "iterations": self.iterations,
            "avg_reduction": self.avg_reduction,
            "converged": self.converged,
            "status": self.status,
            "final_residual": self.final_residual,
            "wall_time": self.wall_time,
            "residual_history": list(self.residual_history),
        }


def average_reduction(history) -> float:
    """Geometric-mean reduction per iteration, (r_n / r_0)^(1/n)."""
    n = len(history) - 1
    if n <= 0 or history[0] == 0.0:
        return 0.0
    return float((history[-1] / history[0]) ** (1.0 / n))


def pcg(A, B, b, rtol=1e-6, maxit=500, x0=None):
    """Preconditioned conjugate gradients for SPD ``A`` with SPD preconditioner ``B``.

    ``B`` approximates the inverse of ``A``; both may be matrices or
    LinearOperators.  Convergence is judged on ``||b - A x|| / ||b||``.
    Returns ``(x, PcgReport)``.
    """
    t0 = time.perf_counter()
    A = aslinearoperator(A)
    B = aslinearoperator(B) if B is not None else None
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[1] != b.shape[0]:
        raise ValueError("dimension mismatch between A and b")
    if B is not None and B.shape != A.shape:
        raise ValueError("dimension mismatch between A and B")
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        x[:] = 0.0
        return x, PcgReport(0, [0.0], 0.0, True, time.perf_counter() - t0)
    r = b - A.matvec(x)
    hist = [np.linalg.norm(r) / bnorm]
    status = "maxit"
    it = 0
    if hist[0] <= rtol:
        status = "converged"
    else:
        z = B.matvec(r) if B is not None else r.copy()
        rz = r @ z
        p = z.copy()
        while it < maxit:
            if not rz > 0.0:
                status = "breakdown"
                break
            Ap = A.matvec(p)
            pAp = p @ Ap
            if not pAp > 0.0:
                status = "breakdown"
                break
            alpha = rz / pAp
            x += alpha * p
            r -= alpha * Ap
            it += 1
            hist.append(np.linalg.norm(r) / bnorm)
            if hist[-1] <= rtol:
                status = "converged"
                break
            z = B.matvec(r) if B is not None else r.copy()
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
    final = float(np.linalg.norm(b - A.matvec(x)) / bnorm)
    if status == "converged" and final > 10.0 * rtol:
        status = "drift"
    report = PcgReport(
        iterations=it,
        residual_history=[float(h) for h in hist],
        avg_reduction=average_reduction(hist),
        converged=status == "converged",
        wall_time=time.perf_counter() - t0,
        status=status,
        final_residual=final,
    )
    return x, report


def dense_generalized_eig(A, G) -> np.ndarray:
    """Ascending eigenvalues of ``A x = lam G x`` via Cholesky reduction."""
    A = _dense(A)
    G = _dense(G)
    n = A.shape[0]
    if A.shape != (n, n) or G.shape != (n, n):
        raise ValueError("A and G must be square and of equal size")
    if n > DENSE_LIMIT:
        raise ValueError(f"dense oracle limited to {DENSE_LIMIT} unknowns, got {n}")
    try:
        L = np.linalg.cholesky(0.5 * (G + G.T))
    except np.linalg.LinAlgError as exc:
        raise ValueError("G is not symmetric positive definite") from exc
    X = scipy.linalg.solve_triangular(L, 0.5 * (A + A.T), lower=True)
    C = scipy.linalg.solve_triangular(L, X.T, lower=True)
    return np.linalg.eigvalsh(0.5 * (C + C.T))


def preconditioned_spectrum(A, B) -> np.ndarray:
    """Ascending eigenvalues of ``B A`` for SPD ``A`` and SPD preconditioner ``B``.

    ``B`` is probed into a dense matrix and inverted through its Cholesky
    factor, so the spectrum is that of the pencil ``(A, B^{-1})``.
    """
    Bd = _dense(B)
    Bd = 0.5 * (Bd + Bd.T)
    try:
        L = np.linalg.cholesky(Bd)
    except np.linalg.LinAlgError as exc:
        raise ValueError("preconditioner is not symmetric positive definite") from exc
    Ad = _dense(A)
    # eig(B A) = eig(L^T A L) with B = L L^T
    C = L.T @ (0.5 * (Ad + Ad.T)) @ L
    return np.linalg.eigvalsh(0.5 * (C + C.T))


def _dense(M):
    if sp.issparse(M):
        return M.toarray()
    if isinstance(M, LinearOperator):
        return operator_to_dense(M)
    return np.asarray(M, dtype=float)


def operator_to_dense(op) -> np.ndarray:
    """Probe assembly: apply ``op`` to every unit vector."""
    op = aslinearoperator(op)
    n = op.shape[1]
    if n > DENSE_LIMIT:
        raise ValueError(f"dense oracle limited to {DENSE_LIMIT} unknowns, got {n}")
    return np.column_stack([op.matvec(e) for e in np.eye(n)])


def block_diag_operator(ops) -> LinearOperator:
    """Block-diagonal composition of square operators."""
    ops = [aslinearoperator(o) for o in ops]
    sizes = [o.shape[0] for o in ops]
    offs = np.concatenate([[0], np.cumsum(sizes)])

    def mv(x):
        x = np.ravel(x)
        return np.concatenate([o.matvec(x[a:b]) for o, a, b in zip(ops, offs[:-1], offs[1:])])

    n = int(offs[-1])
    return LinearOperator((n, n), matvec=mv, rmatvec=mv, dtype=float)


def symmetry_defect(op, probes=10, seed=0) -> float:
    """max |<Op x, y> - <x, Op y>| / (||x|| ||y||) over random probes."""
    op = aslinearoperator(op)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(probes):
        x, y = rng.standard_normal((2, op.shape[0]))
        d = abs(op.matvec(x) @ y - x @ op.matvec(y))
        worst = max(worst, d / (np.linalg.norm(x) * np.linalg.norm(y)))
    return worst


def write_matrix(path, A) -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(A))


def read_matrix(path) -> sp.csr_matrix:
    A = sp.csr_matrix(scipy.io.mmread(str(path)))
    A.sort_indices()
    return A


def write_vector(path, v) -> None:
    np.savetxt(Path(path), np.asarray(v, dtype=float), fmt="%.17g")


def read_vector(path) -> np.ndarray:
    return np.atleast_1d(np.loadtxt(Path(path), dtype=float))
