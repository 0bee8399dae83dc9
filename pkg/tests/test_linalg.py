import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from dpgamg.linalg import (
    DENSE_LIMIT,
    average_reduction,
    block_diag_operator,
    dense_generalized_eig,
    operator_to_dense,
    pcg,
    preconditioned_spectrum,
    read_matrix,
    read_vector,
    symmetry_defect,
    write_matrix,
    write_vector,
)


def laplace_1d(n):
    return sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")


def random_spd(rng, n, shift=1.0):
    X = rng.standard_normal((n, n))
    return X @ X.T + shift * np.eye(n)


def dense_cg_iterations(A, b, rtol):
    """Textbook CG in dense arithmetic, counted to the same stopping rule."""
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    nb = np.linalg.norm(b)
    it = 0
    while np.linalg.norm(r) / nb > rtol:
        Ap = A @ p
        alpha = (r @ r) / (p @ Ap)
        x = x + alpha * p
        r_new = r - alpha * Ap
        p = r_new + (r_new @ r_new) / (r @ r) * p
        r = r_new
        it += 1
    return it


def test_identity_one_iteration(rng):
    b = rng.standard_normal(20)
    x, rep = pcg(sp.identity(20), None, b)
    assert rep.iterations == 1 and rep.converged
    np.testing.assert_allclose(x, b)


def test_exact_preconditioner(rng):
    A = random_spd(rng, 30)
    x, rep = pcg(A, np.linalg.inv(A), rng.standard_normal(30), rtol=1e-12)
    assert rep.converged and rep.iterations <= 2


def test_matches_dense_cg_oracle(rng):
    A = laplace_1d(100)
    b = rng.standard_normal(100)
    _, rep = pcg(A, None, b, rtol=1e-8, maxit=1000)
    ref = dense_cg_iterations(A.toarray(), b, 1e-8)
    assert abs(rep.iterations - ref) <= 1


def test_error_energy_norm_decreases(rng):
    A = random_spd(rng, 40, shift=0.5)
    b = rng.standard_normal(40)
    xstar = np.linalg.solve(A, b)
    errs = []
    for k in range(1, 25):
        x, _ = pcg(A, None, b, rtol=1e-30, maxit=k)
        e = x - xstar
        errs.append(e @ A @ e)
    assert np.all(np.diff(errs) <= 1e-12 * errs[0])


def test_report_fields_and_average_reduction(rng):
    A = laplace_1d(50)
    _, rep = pcg(A, None, rng.standard_normal(50), rtol=1e-6)
    h = rep.residual_history
    assert len(h) == rep.iterations + 1 and h[0] == 1.0
    assert np.isclose(rep.avg_reduction, (h[-1] / h[0]) ** (1 / rep.iterations))
    assert rep.final_residual <= 10 * 1e-6
    d = rep.to_dict()
    assert d["status"] == "converged" and d["iterations"] == rep.iterations
    assert average_reduction([1.0]) == 0.0


def test_zero_rhs():
    x, rep = pcg(laplace_1d(10), None, np.zeros(10))
    assert rep.iterations == 0 and rep.converged and not x.any()


def test_maxit_status():
    _, rep = pcg(laplace_1d(200), None, np.ones(200), rtol=1e-10, maxit=3)
    assert rep.status == "maxit" and not rep.converged and rep.iterations == 3


def test_breakdown_on_indefinite():
    A = sp.diags([1.0, -1.0])
    _, rep = pcg(A, None, np.array([1.0, 1.0]))
    assert rep.status == "breakdown" and not rep.converged


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        pcg(np.eye(3), None, np.ones(4))
    with pytest.raises(ValueError):
        pcg(np.eye(3), np.eye(2), np.ones(3))


def test_generalized_eig_basic(rng):
    G = random_spd(rng, 12)
    np.testing.assert_allclose(dense_generalized_eig(G, G), 1.0, atol=1e-12)
    np.testing.assert_allclose(dense_generalized_eig(np.diag([2.0, 1.0]), np.eye(2)), [1, 2])


def test_generalized_eig_cross_check(rng):
    """Cholesky reduction against LAPACK's generalized divide-and-conquer solver."""
    A, G = random_spd(rng, 40), random_spd(rng, 40)
    lam = dense_generalized_eig(A, G)
    ref = scipy.linalg.eigh(A, G, eigvals_only=True, driver="gvd")
    np.testing.assert_allclose(lam, ref, rtol=1e-10)


def test_generalized_eig_errors():
    with pytest.raises(ValueError, match="positive definite"):
        dense_generalized_eig(np.eye(2), np.diag([1.0, -1.0]))
    with pytest.raises(ValueError):
        dense_generalized_eig(sp.identity(DENSE_LIMIT + 1), sp.identity(DENSE_LIMIT + 1))


def test_preconditioned_spectrum(rng):
    A, B = random_spd(rng, 15), random_spd(rng, 15)
    lam = preconditioned_spectrum(A, B)
    ref = np.sort(np.linalg.eigvals(B @ A).real)
    np.testing.assert_allclose(lam, ref, rtol=1e-9)


def test_operator_helpers(rng):
    A, B = random_spd(rng, 4), random_spd(rng, 3)
    op = block_diag_operator([A, sp.csr_matrix(B)])
    np.testing.assert_allclose(operator_to_dense(op), scipy.linalg.block_diag(A, B))
    assert symmetry_defect(op) < 1e-12
    skew = LinearOperator((2, 2), matvec=lambda x: np.array([x[1], -x[0]]))
    assert symmetry_defect(skew) > 0.1


def test_matrix_market_roundtrip(tmp_path, rng):
    A = sp.random(30, 20, density=0.2, random_state=3, format="csr")
    write_matrix(tmp_path / "a.mtx", A)
    B = read_matrix(tmp_path / "a.mtx")
    assert (A != B).nnz == 0
    v = rng.standard_normal(7)
    write_vector(tmp_path / "v.txt", v)
    np.testing.assert_array_equal(read_vector(tmp_path / "v.txt"), v)
    assert len((tmp_path / "v.txt").read_text().splitlines()) == 7
