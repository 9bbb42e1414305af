import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regmva.linalg import (SingularMatrixError, canonicalize_columns, inv_sqrt_psd,
                           projector_distance, qr_diagonal_abs, regularized_inverse, sign_flips,
                           sqrt_psd, sym_eig, thin_svd)


def test_sign_convention():
    M = np.array([[1.0, -3.0], [-2.0, 1.0]])
    np.testing.assert_array_equal(sign_flips(M), [-1.0, -1.0])
    C = canonicalize_columns(M)
    assert C[1, 0] == 2.0 and C[0, 1] == 3.0
    # ties: first occurrence wins
    np.testing.assert_array_equal(sign_flips(np.array([[-1.0], [1.0]])), [-1.0])


def test_sym_eig_descending_and_symmetrized():
    A = np.array([[1.0, 2.0], [0.0, 3.0]])  # symmetrized to [[1,1],[1,3]]
    e = sym_eig(A)
    assert e.eigenvalues[0] > e.eigenvalues[1]
    S = 0.5 * (A + A.T)
    np.testing.assert_allclose(S @ e.eigenvectors, e.eigenvectors * e.eigenvalues, atol=1e-12)


def test_sym_eig_rejects_nan():
    with pytest.raises(ValueError):
        sym_eig(np.array([[np.nan, 0.0], [0.0, 1.0]]))


def test_thin_svd_reconstructs(rng):
    A = rng.standard_normal((6, 3))
    s = thin_svd(A)
    np.testing.assert_allclose(s.reconstruct(), A, atol=1e-12)
    assert s.rank == 3
    np.testing.assert_array_equal(sign_flips(s.Q), np.ones(3))
    r = thin_svd(np.outer(np.arange(4.0), np.ones(3)))
    assert r.rank == 1


def test_psd_roots(rng):
    X = rng.standard_normal((4, 10))
    A = X @ X.T
    R = inv_sqrt_psd(A)
    np.testing.assert_allclose(R @ A @ R, np.eye(4), atol=1e-10)
    S = sqrt_psd(A)
    np.testing.assert_allclose(S @ S, A, atol=1e-10)
    np.testing.assert_allclose(sqrt_psd(A, 0.5) @ inv_sqrt_psd(A, 0.5), np.eye(4), atol=1e-10)
    with pytest.raises(SingularMatrixError):
        inv_sqrt_psd(np.diag([1.0, 0.0]))
    with pytest.raises(ValueError, match="semidefinite"):
        sqrt_psd(np.diag([1.0, -1.0]))


def test_regularized_inverse(rng):
    X = rng.standard_normal((3, 8))
    C = X @ X.T
    np.testing.assert_allclose(regularized_inverse(C, 0.7) @ (C + 0.7 * np.eye(3)), np.eye(3),
                               atol=1e-10)
    with pytest.raises(SingularMatrixError, match="gamma > 0"):
        regularized_inverse(np.diag([1.0, 0.0]))
    np.testing.assert_allclose(regularized_inverse(np.diag([1.0, 0.0]), 1.0), np.diag([0.5, 1.0]))
    with pytest.raises(ValueError):
        regularized_inverse(C, -1.0)


def test_qr_diagonal():
    np.testing.assert_allclose(qr_diagonal_abs(np.diag([3.0, 1.0])), [3.0, 1.0])
    np.testing.assert_array_equal(qr_diagonal_abs(np.zeros((2, 2))), [0.0, 0.0])


def test_projector_distance(rng):
    Q = np.linalg.qr(rng.standard_normal((5, 2)))[0]
    R = np.linalg.qr(rng.standard_normal((2, 2)))[0]
    assert projector_distance(Q, Q @ R) < 1e-12
    assert projector_distance(Q, np.eye(5)[:, :2]) > 0.1


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_thin_svd_properties(m, k, seed):
    A = np.random.default_rng(seed).standard_normal((m, k))
    s = thin_svd(A)
    r = min(m, k)
    assert s.Q.shape == (m, r) and s.P.shape == (k, r)
    np.testing.assert_allclose(s.Q.T @ s.Q, np.eye(r), atol=1e-10)
    assert np.all(np.diff(s.s) <= 1e-12)
    np.testing.assert_allclose(s.reconstruct(), A, atol=1e-10)
