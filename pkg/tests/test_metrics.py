import numpy as np
from conftest import random_dataset
from hypothesis import given, settings
from hypothesis import strategies as st

from regmva.core import fit_closed_form, prepare, uncorrelation_residual
from regmva.iterate import InitScheme, fit_iterative
from regmva.linalg import thin_svd
from regmva.metrics import cef, feature_gram, sparsity_rate, tev


def test_tev_examples():
    U = np.diag([np.sqrt(3.0), 1.0])
    np.testing.assert_allclose(tev(U, np.eye(2)), [3.0, 4.0])
    np.testing.assert_array_equal(tev(np.zeros((3, 2)), np.eye(3)), [0.0, 0.0])


def test_tev_equals_lambda_partial_sums(segment):
    model = fit_closed_form(segment, "opls", 6)
    Cxx = prepare(segment, "opls").Cxx
    np.testing.assert_allclose(tev(model.U, Cxx), np.cumsum(model.Lambda), rtol=1e-6)


def test_cef_examples():
    U = np.linalg.cholesky(np.array([[2.0, 1.0], [1.0, 3.0]])).T
    assert abs(cef(U, np.eye(2)) - np.sqrt(2.0)) < 1e-12
    assert cef(np.diag([1.0, 2.0]), np.eye(2)) == 0.0


def test_cef_matches_procrustes_formula(segment):
    prob = prepare(segment, "opls")
    model = fit_iterative(prob, "opls", 4, strategy="procrustes", init=InitScheme.random(3))
    svd = thin_svd(prob.B().T @ model.U)
    A = (svd.P * svd.s) @ svd.P.T
    expected = np.linalg.norm(A - np.diag(np.diag(A)))
    assert abs(cef(model.U, prob.Cxx) - expected) <= 1e-6 * max(1.0, expected)
    assert cef(model.U, prob.Cxx) > 1e-3


def test_cef_is_uncorrelation_residual(rng):
    U = rng.standard_normal((4, 3))
    C = np.cov(rng.standard_normal((4, 10)))
    assert cef(U, C) == uncorrelation_residual(U, C)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_tev_sign_invariant(k, seed):
    rng = np.random.default_rng(seed)
    d = random_dataset(rng, 6, 3, 30)
    U = rng.standard_normal((6, k))
    signs = rng.choice([-1.0, 1.0], size=k)
    Cxx = d.X @ d.X.T
    np.testing.assert_allclose(tev(U * signs, Cxx), tev(U, Cxx), rtol=1e-12)


def test_tev_of_diagonal_gram_is_trace():
    C = np.diag([5.0, 3.0, 1.0])
    U = np.eye(3)
    assert tev(U, C)[-1] == np.trace(feature_gram(U, C))


def test_sparsity_threshold():
    assert sparsity_rate(np.array([1e-13, 1e-11])) == 0.5
    assert sparsity_rate(np.zeros((0, 2))) == 0.0
