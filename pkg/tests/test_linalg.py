import numpy as np
import pytest
import scipy.sparse as sp

from logmorph.linalg import equilibrate, gmres_restarted, ilut_factor


def adv_diff_1d(n, peclet=50.0):
    h = 1.0 / (n + 1)
    diff = 1.0 / h ** 2
    adv = peclet / h
    return sp.diags([-diff - adv, 2 * diff + adv, -diff], [-1, 0, 1], shape=(n, n), format="csr")


def test_gmres_dense_spd_matches_direct(rng):
    A = rng.normal(size=(30, 30))
    A = A @ A.T + 30 * np.eye(30)
    b = rng.normal(size=30)
    x, info = gmres_restarted(A, b, krylov_dim=30, tol=1e-13, max_iter=200)
    assert info.converged
    assert np.allclose(x, np.linalg.solve(A, b), rtol=0, atol=1e-10 * np.abs(x).max())


def test_gmres_restarts_and_counts(rng):
    A = sp.identity(50, format="csr") * 3.0 + sp.random(50, 50, 0.05, random_state=1)
    b = rng.normal(size=50)
    x, info = gmres_restarted(A, b, krylov_dim=5, tol=1e-10, max_iter=500)
    assert info.converged and info.restarts >= 1
    assert len(info.history) == info.iterations + 1
    assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b) * 1.0001


def test_identity_takes_one_iteration():
    x, info = gmres_restarted(sp.identity(10, format="csr"), np.arange(10.0), tol=1e-12)
    assert info.iterations == 1 and np.allclose(x, np.arange(10.0))


def test_ilut_full_fill_is_exact_lu(rng):
    A = sp.csr_matrix(rng.normal(size=(25, 25)) + 10 * np.eye(25))
    M = ilut_factor(A, fill=25, threshold=0.0)
    b = rng.normal(size=25)
    assert np.allclose(M.solve(b), np.linalg.solve(A.toarray(), b), atol=1e-11)
    x, info = gmres_restarted(A, b, M, tol=1e-12)
    assert info.iterations == 1


def test_ilut_preconditioning_cuts_iterations():
    A = adv_diff_1d(400)
    b = np.ones(400)
    _, plain = gmres_restarted(A, b, None, krylov_dim=10, tol=1e-8, max_iter=5000)
    _, prec = gmres_restarted(A, b, ilut_factor(A, 20, 1e-4), krylov_dim=10, tol=1e-8, max_iter=5000)
    assert prec.converged
    assert prec.iterations <= plain.iterations / 3


def test_zero_pivot_is_shifted_and_counted():
    A = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    M = ilut_factor(A, fill=0, threshold=1.0, scale=False)
    assert M.shifts >= 1
    assert np.all(np.isfinite(M.solve(np.ones(2))))


def test_equilibrate_unit_max(rng):
    A = sp.csr_matrix(rng.normal(size=(8, 8)) * np.logspace(-4, 4, 8)[:, None])
    B, r, c = equilibrate(A)
    assert np.allclose(abs(B).max(axis=1).toarray().ravel(), 1.0)
    assert np.allclose((sp.diags(r) @ A @ sp.diags(c)).toarray(), B.toarray())
